#include "imageio.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace satnet {

TensorF read_image_rgb(const std::string& path, int size, bool& resized) {
    cv::Mat img = cv::imread(path, cv::IMREAD_COLOR); // BGR, 8-bit
    resized = false;
    if (img.empty()) return {};
    if (img.rows != size || img.cols != size) {
        cv::Mat scaled;
        cv::resize(img, scaled, cv::Size(size, size), 0, 0, cv::INTER_AREA);
        img = scaled;
        resized = true;
    }
    TensorF out({3, size, size});
    float* data = out.data();
    const long long plane = static_cast<long long>(size) * size;
    for (int y = 0; y < size; ++y) {
        const cv::Vec3b* row = img.ptr<cv::Vec3b>(y);
        for (int x = 0; x < size; ++x) {
            const long long p = static_cast<long long>(y) * size + x;
            data[p] = static_cast<float>(row[x][2]) / 255.0f;             // R
            data[plane + p] = static_cast<float>(row[x][1]) / 255.0f;     // G
            data[2 * plane + p] = static_cast<float>(row[x][0]) / 255.0f; // B
        }
    }
    return out;
}

bool write_image_rgb(const TensorF& img, const std::string& path) {
    if (!img.defined() || img.rank() != 3 || img.dim(0) != 3) return false;
    const int h = img.dim(1), w = img.dim(2);
    const long long plane = static_cast<long long>(h) * w;
    const float* data = img.data();
    cv::Mat out(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        cv::Vec3b* row = out.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            const long long p = static_cast<long long>(y) * w + x;
            auto to_u8 = [](float v) {
                return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            };
            row[x][2] = to_u8(data[p]);
            row[x][1] = to_u8(data[plane + p]);
            row[x][0] = to_u8(data[2 * plane + p]);
        }
    }
    return cv::imwrite(path, out);
}

} // namespace satnet
