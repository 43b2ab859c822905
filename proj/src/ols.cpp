#include "policyfx/ols.hpp"

#include "policyfx/error.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace policyfx {

namespace {

double condition_ratio(const Eigen::MatrixXd& scaled) {
    if (scaled.cols() == 0) {
        return 1.0;
    }
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(scaled);
    const Eigen::Index p = scaled.cols();
    const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
    const auto& s = svd.singularValues();
    return s(0) > 0.0 ? s(p - 1) / s(0) : 0.0;
}

std::string column_label(std::span<const std::string> names, Eigen::Index j) {
    const auto k = static_cast<std::size_t>(j);
    return k < names.size() ? "'" + names[k] + "'" : "#" + std::to_string(j);
}

}  // namespace

OlsResult solve_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                    std::span<const std::string> column_names, double rank_tolerance) {
    const Eigen::Index n = design.rows();
    const Eigen::Index p = design.cols();
    if (response.size() != n) {
        throw ValidationError("response length " + std::to_string(response.size()) +
                              " differs from design rows " + std::to_string(n));
    }
    if (p == 0 || n < p) {
        throw ValidationError("least squares needs n >= p >= 1 (n=" + std::to_string(n) +
                              ", p=" + std::to_string(p) + ")");
    }
    if (!design.allFinite() || !response.allFinite()) {
        throw ValidationError("least squares input contains non-finite values");
    }

    const Eigen::VectorXd norms = design.colwise().norm();
    Eigen::MatrixXd scaled = design;
    std::vector<std::string> zero_cols;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (norms(j) == 0.0) {
            zero_cols.push_back(column_label(column_names, j));
        } else {
            scaled.col(j) /= norms(j);
        }
    }
    if (!zero_cols.empty() || condition_ratio(scaled) < rank_tolerance) {
        // Greedy pass: a column is offending when it adds no rank to the kept set.
        std::vector<Eigen::Index> kept;
        std::string offending;
        for (Eigen::Index j = 0; j < p; ++j) {
            bool dependent = norms(j) == 0.0;
            if (!dependent) {
                Eigen::MatrixXd trial(n, static_cast<Eigen::Index>(kept.size()) + 1);
                for (std::size_t k = 0; k < kept.size(); ++k) {
                    trial.col(static_cast<Eigen::Index>(k)) = scaled.col(kept[k]);
                }
                trial.col(trial.cols() - 1) = scaled.col(j);
                dependent = condition_ratio(trial) < rank_tolerance;
            }
            if (dependent) {
                offending += (offending.empty() ? "" : ", ") + column_label(column_names, j);
            } else {
                kept.push_back(j);
            }
        }
        throw NumericalError("singular design: column(s) " + offending +
                             " linearly dependent on earlier columns");
    }

    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(scaled);
    const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const Eigen::VectorXd scaled_coef = qr.solve(response);

    OlsResult result;
    result.coefficients = scaled_coef.cwiseQuotient(norms);
    result.residuals = response - design * result.coefficients;
    result.rss = result.residuals.squaredNorm();
    result.dof = n - p;

    const Eigen::MatrixXd r_inv =
        r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
    result.stderrs.resize(p);
    if (result.dof == 0) {
        result.stderrs.setConstant(std::numeric_limits<double>::quiet_NaN());
    } else {
        const double sigma2 = result.rss / static_cast<double>(result.dof);
        for (Eigen::Index j = 0; j < p; ++j) {
            result.stderrs(j) = std::sqrt(sigma2 * r_inv.row(j).squaredNorm()) / norms(j);
        }
    }
    return result;
}

}  // namespace policyfx
