#include "nrdet/image.hpp"

#include <algorithm>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace nrdet {

Tensor load_image(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw std::runtime_error("cannot read image: " + path);
    Tensor out(3, bgr.rows, bgr.cols);
    for (int y = 0; y < bgr.rows; ++y) {
        const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            out.at(0, y, x) = row[x][2] / 255.0;
            out.at(1, y, x) = row[x][1] / 255.0;
            out.at(2, y, x) = row[x][0] / 255.0;
        }
    }
    return out;
}

void save_image(const Tensor& image, const std::string& path) {
    if (image.c != 3) throw std::invalid_argument("save_image: expects 3 channels");
    cv::Mat bgr(image.h, image.w, CV_8UC3);
    for (int y = 0; y < image.h; ++y) {
        cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.w; ++x) {
            for (int ci = 0; ci < 3; ++ci) {
                const double v = std::clamp(image.at(ci, y, x), 0.0, 1.0);
                row[x][2 - ci] = static_cast<uchar>(std::lround(v * 255.0));
            }
        }
    }
    if (!cv::imwrite(path, bgr)) throw std::runtime_error("cannot write image: " + path);
}

}  // namespace nrdet
