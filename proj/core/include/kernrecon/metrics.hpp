#pragma once

#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "kernrecon/common.hpp"

namespace kernrecon {

/// Windowed SSIM parameters. The Gaussian window is truncated at image
/// borders and renormalized, and the SSIM map is averaged over all pixels
/// and then over channels.
struct SsimOptions {
  Index window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  /// Dynamic range L. Defaults to max - min over both images (1 if constant).
  std::optional<double> dynamic_range;
};

double ssim(const Vector& x, const Vector& x2, const ImageShape& shape,
            const SsimOptions& options = {});

/// (1 - SSIM) / 2, in [0, 1].
double dssim(const Vector& x, const Vector& x2, const ImageShape& shape,
             const SsimOptions& options = {});

double l2(const Vector& x, const Vector& x2);

enum class DistanceKind { L2, Dssim };

/// Entry (i, j) is the distance between train.row(i) and recons.row(j).
Matrix distance_matrix(const Matrix& recons, const Matrix& train, DistanceKind kind,
                       const std::optional<ImageShape>& shape = std::nullopt,
                       const SsimOptions& options = {});

struct MutualMatch {
  double percentage = 0.0;  // pairs / N * 100
  /// (train index, recon index) of every mutual nearest-neighbour pair
  /// counted, in increasing train index.
  std::vector<std::pair<Index, Index>> pairs;
  std::vector<double> pair_distance;
};

/// Mutual nearest neighbours over a precomputed train x recon distance
/// matrix. Ties go to the lowest index. Pairs farther apart than
/// `max_distance` are not counted.
MutualMatch mutual_nn_from_distances(const Matrix& distances,
                                     double max_distance = std::numeric_limits<double>::infinity());

MutualMatch mutual_nn_recovery(const Matrix& recons, const Matrix& train, DistanceKind kind,
                               const std::optional<ImageShape>& shape = std::nullopt,
                               double max_distance = std::numeric_limits<double>::infinity());

/// Linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

struct Percentiles {
  double p25 = 0.0;
  double p50 = 0.0;
  double p75 = 0.0;
};

Percentiles percentiles_of(const std::vector<double>& values);

struct ReportOptions {
  std::optional<ImageShape> shape;
  /// Non-image data: mutual pairs farther apart than this (L2) do not count.
  double l2_tolerance = std::numeric_limits<double>::infinity();
  double dssim_threshold = 0.3;
  SsimOptions ssim;
};

struct ReconReport {
  std::vector<double> nearest_l2;                    // per training point
  std::optional<std::vector<double>> nearest_dssim;  // image data only
  Percentiles l2;
  std::optional<Percentiles> dssim;
  double recovery_pct = 0.0;
  std::optional<double> recovery_below_threshold_pct;  // image data only
  MutualMatch matches;
};

/// Nearest-reconstruction distances per training point, their quartiles,
/// and mutual-NN recovery (under DSSIM for images, L2 otherwise).
ReconReport report(const Matrix& recons, const Matrix& train, const ReportOptions& options = {});

}  // namespace kernrecon
