#include "dmse/mvn.hpp"

#include "dmse/normal.hpp"
#include "dmse/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace dmse {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kRandomizations = 12;
constexpr std::int64_t kInitialLatticeSize = 64;

bool try_llt(const Matrix& a, Matrix& out) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return false;
  out = llt.matrixL();
  const double scale = a.diagonal().mean();
  // A pivot this small is numerically zero even if Eigen accepted it.
  for (Index i = 0; i < out.rows(); ++i) {
    const double d = out(i, i);
    if (!(d * d > 1e-15 * scale)) return false;
  }
  return true;
}

void check_symmetric(const Matrix& cov) {
  if (cov.rows() != cov.cols() || cov.rows() < 1) {
    throw InvalidArgument("covariance must be a nonempty square matrix");
  }
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw InvalidArgument("covariance is not symmetric");
  }
}

const std::vector<double>& lattice_generator(Index dims) {
  // frac(sqrt(p)) for the first primes; grown on demand per thread.
  thread_local std::vector<double> gen;
  thread_local int last_prime = 1;
  while (static_cast<Index>(gen.size()) < dims) {
    int p = last_prime + 1;
    for (;; ++p) {
      bool prime = true;
      for (int d = 2; d * d <= p; ++d) {
        if (p % d == 0) {
          prime = false;
          break;
        }
      }
      if (prime) break;
    }
    last_prime = p;
    const double r = std::sqrt(static_cast<double>(p));
    gen.push_back(r - std::floor(r));
  }
  return gen;
}

// Reordered problem in the separation-of-variables form.
struct GenzForm {
  Matrix chol;  // lower, of the permuted covariance
  Vector lower;
  Vector upper;
};

GenzForm reorder_and_factor(const Matrix& cov, Vector a, Vector b) {
  const Index n = cov.rows();
  Matrix c = cov;
  Matrix l = Matrix::Zero(n, n);
  Vector y = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    Index best = i;
    double best_mass = kInf;
    for (Index j = i; j < n; ++j) {
      const double var = c(j, j) - l.row(j).head(i).squaredNorm();
      const double sd = std::sqrt(std::max(var, 1e-300));
      const double shift = l.row(j).head(i).dot(y.head(i));
      const double mass = norm_interval((a(j) - shift) / sd, (b(j) - shift) / sd);
      if (mass < best_mass) {
        best_mass = mass;
        best = j;
      }
    }
    if (best != i) {
      c.row(i).swap(c.row(best));
      c.col(i).swap(c.col(best));
      l.row(i).swap(l.row(best));
      std::swap(a(i), a(best));
      std::swap(b(i), b(best));
    }
    const double var = c(i, i) - l.row(i).head(i).squaredNorm();
    const double diag = std::sqrt(std::max(var, 1e-300));
    l(i, i) = diag;
    for (Index j = i + 1; j < n; ++j) {
      l(j, i) = (c(j, i) - l.row(j).head(i).dot(l.row(i).head(i))) / diag;
    }
    const double shift = l.row(i).head(i).dot(y.head(i));
    y(i) = truncated_norm_mean((a(i) - shift) / diag, (b(i) - shift) / diag);
  }
  return {std::move(l), std::move(a), std::move(b)};
}

// Integrand at w in [0,1]^(n-1); y is scratch space of size n.
double genz_integrand(const GenzForm& g, const double* w, Vector& y) {
  const Index n = g.chol.rows();
  double lo = g.lower(0) / g.chol(0, 0);
  double hi = g.upper(0) / g.chol(0, 0);
  double f = norm_interval(lo, hi);
  for (Index i = 1; i < n && f > 0.0; ++i) {
    y(i - 1) = norm_interval_quantile(lo, hi, w[i - 1]);
    const double shift = g.chol.row(i).head(i).dot(y.head(i));
    const double diag = g.chol(i, i);
    lo = (g.lower(i) - shift) / diag;
    hi = (g.upper(i) - shift) / diag;
    f *= norm_interval(lo, hi);
  }
  return f;
}


// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussLegendre {
  std::vector<double> x, w;
};

const GaussLegendre& gauss_legendre20() {
  static const GaussLegendre rule = [] {
    constexpr int n = 20;
    GaussLegendre g;
    g.x.resize(n);
    g.w.resize(n);
    for (int i = 0; i < n; ++i) {
      double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = z;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (z * p1 - p0) / (z * z - 1.0);
        const double step = p1 / dp;
        z -= step;
        if (std::fabs(step) < 1e-16) break;
      }
      g.x[i] = z;
      g.w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    return g;
  }();
  return rule;
}

// P(X > h, Y > k) for a standard bivariate normal with correlation r
// (Drezner-Wesolowsky with Genz's refinements).
double bvn_upper(double h, double k, double r) {
  if (h == kInf || k == kInf) return 0.0;
  if (h == -kInf) return norm_sf(k);
  if (k == -kInf) return norm_sf(h);
  const GaussLegendre& gl = gauss_legendre20();
  const double two_pi = 2.0 * std::numbers::pi;
  double hk = h * k;
  double bvn = 0.0;
  if (std::fabs(r) < 0.925) {
    const double hs = 0.5 * (h * h + k * k);
    const double asr = std::asin(r);
    for (std::size_t i = 0; i < gl.x.size(); ++i) {
      const double sn = std::sin(0.5 * asr * (gl.x[i] + 1.0));
      bvn += gl.w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
    }
    return bvn * asr / (2.0 * two_pi) + norm_sf(h) * norm_sf(k);
  }
  if (r < 0.0) {
    k = -k;
    hk = -hk;
  }
  if (std::fabs(r) < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 16.0;
    bvn = a * std::exp(-0.5 * (bs / as + hk)) *
          (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
    if (hk > -160.0) {
      const double b = std::sqrt(bs);
      bvn -= std::exp(-0.5 * hk) * std::sqrt(two_pi) * norm_cdf(-b / a) * b *
             (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a *= 0.5;
    for (std::size_t i = 0; i < gl.x.size(); ++i) {
      const double xs = (a * (gl.x[i] + 1.0)) * (a * (gl.x[i] + 1.0));
      const double rs = std::sqrt(1.0 - xs);
      bvn += a * gl.w[i] *
             (std::exp(-bs / (2.0 * xs) - hk / (1.0 + rs)) / rs -
              std::exp(-0.5 * (bs / xs + hk)) * (1.0 + c * xs * (1.0 + d * xs)));
    }
    bvn = -bvn / two_pi;
  }
  if (r > 0.0) return bvn + norm_sf(std::max(h, k));
  bvn = -bvn;
  if (k > h) {
    bvn += h < 0.0 ? norm_cdf(k) - norm_cdf(h) : norm_sf(h) - norm_sf(k);
  }
  return bvn;
}

double bvn_rectangle(const Vector& a, const Vector& b, double r) {
  const double p = bvn_upper(a(0), a(1), r) - bvn_upper(b(0), a(1), r) -
                   bvn_upper(a(0), b(1), r) + bvn_upper(b(0), b(1), r);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace

Rectangle Rectangle::from_presence(std::span<const std::uint8_t> bits) {
  const Index n = static_cast<Index>(bits.size());
  Rectangle r{Vector(n), Vector(n)};
  for (Index j = 0; j < n; ++j) {
    if (bits[j]) {
      r.lower(j) = 0.0;
      r.upper(j) = kInf;
    } else {
      r.lower(j) = -kInf;
      r.upper(j) = 0.0;
    }
  }
  return r;
}

Rectangle Rectangle::whole_space(Index n) {
  return {Vector::Constant(n, -kInf), Vector::Constant(n, kInf)};
}

bool Rectangle::contains(const Vector& x) const {
  if (x.size() != size()) return false;
  for (Index j = 0; j < size(); ++j) {
    if (!(x(j) > lower(j) && x(j) < upper(j))) return false;
  }
  return true;
}

void Rectangle::validate() const {
  if (lower.size() != upper.size()) throw DimMismatch("rectangle bound lengths differ");
  for (Index j = 0; j < size(); ++j) {
    if (!(lower(j) < upper(j))) {
      throw InvalidArgument("empty rectangle in coordinate " + std::to_string(j));
    }
  }
}

CholeskyResult cholesky(const Matrix& cov) {
  check_symmetric(cov);
  CholeskyResult out;
  if (try_llt(cov, out.lower)) return out;
  const double jitter = 1e-8 * cov.diagonal().mean();
  Matrix bumped = cov;
  bumped.diagonal().array() += jitter;
  if (!(jitter > 0.0) || !try_llt(bumped, out.lower)) {
    throw NotPositiveDefinite("covariance is not positive definite, even after jitter");
  }
  out.jittered = true;
  return out;
}

std::shared_ptr<const CovarianceFactor> CovarianceFactor::make(const Matrix& cov) {
  auto f = std::make_shared<CovarianceFactor>();
  CholeskyResult c = cholesky(cov);
  f->cov = cov;
  f->chol = std::move(c.lower);
  f->jittered = c.jittered;
  f->effective = f->chol * f->chol.transpose();
  const Index n = cov.rows();
  f->precision = f->chol.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  f->precision = f->precision.transpose() * f->precision;
  f->precision = 0.5 * (f->precision + f->precision.transpose());
  f->log_det = 2.0 * f->chol.diagonal().array().log().sum();
  return f;
}

MvnProblem::MvnProblem(Vector mean, const Matrix& cov)
    : MvnProblem(std::move(mean), CovarianceFactor::make(cov)) {}

MvnProblem::MvnProblem(Vector mean, std::shared_ptr<const CovarianceFactor> factor)
    : mean_(std::move(mean)), factor_(std::move(factor)) {
  if (!factor_) throw InvalidArgument("null covariance factor");
  if (mean_.size() != factor_->cov.rows()) {
    throw DimMismatch("mean has length " + std::to_string(mean_.size()) +
                      " but covariance is " + std::to_string(factor_->cov.rows()) + "x" +
                      std::to_string(factor_->cov.rows()));
  }
}

double MvnProblem::log_pdf(const Vector& x) const {
  if (x.size() != dim()) throw DimMismatch("point dimension does not match problem");
  const Vector z = chol().triangularView<Eigen::Lower>().solve(x - mean_);
  return -0.5 * (static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi) +
                 factor_->log_det + z.squaredNorm());
}

CdfEstimate cdf_rectangle(const MvnProblem& problem, const Rectangle& rect, double tol,
                          std::int64_t max_samples, std::uint64_t seed) {
  const Index n = problem.dim();
  if (rect.size() != n) throw DimMismatch("rectangle and problem dimensions differ");
  rect.validate();

  const Vector a = rect.lower - problem.mean();
  const Vector b = rect.upper - problem.mean();
  const Matrix& cov = problem.factor().effective;

  CdfEstimate est;
  if (n == 1) {
    const double sd = std::sqrt(cov(0, 0));
    est.value = norm_interval(a(0) / sd, b(0) / sd);
    est.error_estimate = 4 * std::numeric_limits<double>::epsilon() * est.value;
    return est;
  }
  if (n == 2) {
    const double s0 = std::sqrt(cov(0, 0));
    const double s1 = std::sqrt(cov(1, 1));
    const Vector lo{{a(0) / s0, a(1) / s1}};
    const Vector hi{{b(0) / s0, b(1) / s1}};
    est.value = bvn_rectangle(lo, hi, std::clamp(cov(0, 1) / (s0 * s1), -1.0, 1.0));
    est.error_estimate = std::min(1e-14, std::max(est.value, 0.0));
    return est;
  }

  const GenzForm form = reorder_and_factor(cov, a, b);
  const Index dims = n - 1;
  const std::vector<double>& gen = lattice_generator(dims);

  Rng rng(seed);
  std::array<Vector, kRandomizations> shifts;
  for (auto& s : shifts) {
    s.resize(dims);
    for (Index d = 0; d < dims; ++d) s(d) = rng.uniform();
  }

  std::array<double, kRandomizations> sums{};
  std::vector<double> w(static_cast<std::size_t>(dims));
  Vector y(n);
  std::int64_t points = 0;  // per randomization
  std::int64_t target = kInitialLatticeSize;
  for (;;) {
    for (int r = 0; r < kRandomizations; ++r) {
      double acc = 0.0;
      for (std::int64_t j = points + 1; j <= target; ++j) {
        const double jd = static_cast<double>(j);
        for (Index d = 0; d < dims; ++d) {
          double u = jd * gen[d] + shifts[r](d);
          u -= std::floor(u);
          w[d] = 1.0 - std::fabs(2.0 * u - 1.0);
        }
        acc += genz_integrand(form, w.data(), y);
      }
      sums[r] += acc;
    }
    points = target;

    double mean = 0.0;
    for (double s : sums) mean += s;
    mean /= static_cast<double>(kRandomizations) * static_cast<double>(points);
    double var = 0.0;
    for (double s : sums) {
      const double d = s / static_cast<double>(points) - mean;
      var += d * d;
    }
    var /= static_cast<double>(kRandomizations) * (kRandomizations - 1);

    est.value = std::clamp(mean, 0.0, 1.0);
    est.error_estimate = 3.0 * std::sqrt(var);
    est.samples_used = points * kRandomizations;
    if (est.error_estimate <= tol * std::max(est.value, 1e-300)) {
      est.converged = true;
      break;
    }
    if (2 * target * kRandomizations > max_samples) {
      est.converged = false;
      break;
    }
    target *= 2;
  }
  // Report an interval that stays inside [0, 1].
  const double cap = std::max(0.0, std::min(est.value, 1.0 - est.value));
  est.error_estimate = std::clamp(est.error_estimate, 0.0, cap);
  return est;
}

ClippedRectangle clip_rectangle(const Rectangle& rect, const MvnProblem& problem, double k) {
  const Index n = problem.dim();
  if (rect.size() != n) throw DimMismatch("rectangle and problem dimensions differ");
  if (!(k > 0.0)) throw InvalidArgument("cutoff k must be positive");
  ClippedRectangle out{rect, false};
  for (Index j = 0; j < n; ++j) {
    const double mu = problem.mean()(j);
    const double span = k * std::sqrt(problem.cov()(j, j));
    double lo = std::max(rect.lower(j), mu - span);
    double hi = std::min(rect.upper(j), mu + span);
    if (!(lo < hi)) {
      // The box lies entirely beyond mu +/- k sd; keep a window of width
      // k sd next to the near edge.
      out.widened = true;
      if (rect.lower(j) >= mu + span) {
        lo = rect.lower(j);
        hi = std::min(rect.upper(j), lo + span);
      } else {
        hi = rect.upper(j);
        lo = std::max(rect.lower(j), hi - span);
      }
    }
    out.rect.lower(j) = lo;
    out.rect.upper(j) = hi;
  }
  return out;
}

void SamplerConfig::validate() const {
  if (n_samples < 1) throw InvalidArgument("n_samples must be >= 1");
  if (burn_in_sweeps < 0) throw InvalidArgument("burn_in_sweeps must be >= 0");
  if (thinning < 1) throw InvalidArgument("thinning must be >= 1");
  if (!(cutoff_k >= 3.0)) throw InvalidArgument("cutoff_k must be >= 3");
}

Matrix sample_truncated(const MvnProblem& problem, const Rectangle& rect,
                        const SamplerConfig& cfg) {
  cfg.validate();
  const Index n = problem.dim();
  if (rect.size() != n) throw DimMismatch("rectangle and problem dimensions differ");
  rect.validate();

  const Matrix& q = problem.precision();
  if (!q.allFinite()) throw SingularCovariance("precision matrix is not finite");
  const Vector& mu = problem.mean();
  const Vector cond_sd = q.diagonal().cwiseInverse().cwiseSqrt();

  Vector x = mu.cwiseMax(rect.lower).cwiseMin(rect.upper);
  Vector dev = x - mu;
  Rng rng(cfg.rng_seed);
  Matrix draws(n, cfg.n_samples);

  auto sweep = [&] {
    for (Index j = 0; j < n; ++j) {
      const double qjj = q(j, j);
      const double cross = q.row(j).dot(dev) - qjj * dev(j);
      const double m = mu(j) - cross / qjj;
      x(j) = sample_truncated_normal(m, cond_sd(j), rect.lower(j), rect.upper(j), rng);
      dev(j) = x(j) - mu(j);
    }
  };

  for (Index s = 0; s < cfg.burn_in_sweeps; ++s) sweep();
  for (Index k = 0; k < cfg.n_samples; ++k) {
    for (Index t = 0; t < cfg.thinning; ++t) sweep();
    draws.col(k) = x;
  }
  return draws;
}

}  // namespace dmse
