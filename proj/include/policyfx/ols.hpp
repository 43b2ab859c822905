#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>

namespace policyfx {

struct OlsResult {
    Eigen::VectorXd coefficients;
    Eigen::VectorXd residuals;
    /// Classical homoskedastic standard errors; NaN when n == p.
    Eigen::VectorXd stderrs;
    double rss = 0.0;
    Eigen::Index dof = 0;  ///< n - p
};

/// Least squares via Householder QR.
///
/// Rank is judged on the column-equilibrated design: if the ratio of smallest
/// to largest singular value falls below `rank_tolerance`, a NumericalError
/// names each column that is linearly dependent on the columns before it.
OlsResult solve_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                    std::span<const std::string> column_names = {}, double rank_tolerance = 1e-10);

}  // namespace policyfx
