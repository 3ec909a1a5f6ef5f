#pragma once
// Evaluation metrics: Dice overlap, mask surface extraction, mean surface
// distance, target registration error, paired t-tests, and whole-case
// evaluation rows.
//
// Conventions: masks are warped with nearest-neighbor pull-back; landmarks on
// the moving image travel through the inverse of the pull-back displacement,
// so a field that registers the images also collapses the landmark error.

#include <string>
#include <vector>

#include "morphreg/grid.hpp"

namespace morphreg {

// 2 |a intersect b| / (|a| + |b|); 1 when both masks are empty.
double dsc(const MaskVolume& a, const MaskVolume& b);

// World-coordinate centers of foreground voxels with at least one 6-neighbor
// background voxel; the grid boundary counts as background.
PointSet surface_points_from_mask(const MaskVolume& mask);

// Symmetric mean surface distance in mm (average of both directed means).
double msd(const PointSet& a, const PointSet& b);

// Mean Euclidean distance over index-matched pairs, mm.
double tre(const PointSet& a, const PointSet& b);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    bool degenerate = false;   // zero-variance differences
};

// Paired two-tailed Student t-test on x - y (sample std, n-1 dof). All-equal
// inputs are flagged degenerate with p = 1; zero-variance nonzero shifts are
// flagged degenerate with p = 0.
TTestResult paired_t_test(const std::vector<double>& x, const std::vector<double>& y);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation;
// exposed because the t CDF reduces to it and tests pin it independently.
double regularized_incomplete_beta(double a, double b, double x);

struct CaseMetrics {
    double dsc_liver = 0.0;
    double dsc_vessel = 0.0;
    double msd_liver_mm = 0.0;
    double tre_mm = 0.0;
    double jacobian_negative_fraction = 0.0;
};

// Everything evaluation needs about one registration case.
struct CaseData {
    MaskVolume fixed_liver;
    MaskVolume fixed_vessel;
    MaskVolume moving_liver;
    MaskVolume moving_vessel;
    PointSet fixed_landmarks;
    PointSet moving_landmarks;
};

// Evaluate a case under a pull-back displacement field (zero field = the
// pre-registration row): warps the moving masks, transports the moving
// landmarks through the inverted field, and scores against the fixed side.
CaseMetrics evaluate_case(const CaseData& data, const VectorField& displacement);

struct AggregateStats {
    double mean = 0.0;
    double stddev = 0.0;   // sample std (n-1); 0 for n < 2
};

AggregateStats aggregate(const std::vector<double>& values);

// "8.492 ± 1.058" style cell used by the report tables.
std::string format_mean_std(const AggregateStats& stats, int decimals = 3);

}  // namespace morphreg
