#pragma once

// Full-reference image quality metrics. The second argument is always the
// reference (ground truth). Images are single-channel, 1 x H x W or H x W.

#include <filesystem>
#include <string>
#include <vector>

#include "afflow/tensor.hpp"

namespace afflow {

inline constexpr double kPsnrCap = 100.0;

// 20 log10(max(ref) sqrt(N) / ||ref - a||), capped at kPsnrCap.
double psnr(const Tensor& a, const Tensor& ref);

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

// Mean SSIM over all fully contained Gaussian windows.
double ssim(const Tensor& a, const Tensor& ref, const SsimParams& p = {});

// SSIM without stabilisers. Windows whose denominator vanishes (both
// windows flat, or both zero-mean) are skipped; if every window is skipped
// the result is 1 for identical images and 0 otherwise.
double uqi(const Tensor& a, const Tensor& ref, const SsimParams& p = {});

// Normalised 1-D Gaussian taps used by ssim/uqi.
std::vector<double> gaussian_window(std::size_t size, double sigma);

struct ImageScore {
  std::string id;
  double psnr = 0, ssim = 0, uqi = 0;
};

struct MetricReport {
  std::vector<ImageScore> images;
  ImageScore mean;  // id "mean"
};

MetricReport summarize(std::vector<ImageScore> scores);
ImageScore score_image(const std::string& id, const Tensor& a, const Tensor& ref);

// CSV "id,psnr,ssim,uqi", one row per image, then the mean row.
void write_report(const std::filesystem::path& path, const MetricReport& r);

}  // namespace afflow
