#include "dynlat/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dynlat/error.hpp"

namespace dynlat {

namespace {

std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  double hi = -INFINITY;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] / temperature;
    hi = std::max(hi, out[i]);
  }
  double sum = 0.0;
  for (const double v : out) sum += std::exp(v - hi);
  const double lse = hi + std::log(sum);
  for (auto& v : out) v -= lse;
  return out;
}

}  // namespace

void TrainingConfig::validate() const {
  if (!(target_t > 0 && target_t < 1)) throw Error(ErrorCode::kInvalidArgument, "target t must lie in (0, 1)");
  if (alpha < 0 || beta < 0) throw Error(ErrorCode::kInvalidArgument, "loss weights must be nonnegative");
  if (!(kd_temperature > 0)) throw Error(ErrorCode::kInvalidArgument, "distillation temperature must be positive");
  if (!(tau_end > 0) || tau_start < tau_end) {
    throw Error(ErrorCode::kInvalidArgument, "need tau_start >= tau_end > 0");
  }
  if (total_steps < 1) throw Error(ErrorCode::kInvalidArgument, "total_steps must be positive");
}

double flops_loss(double f_dyn, double f_stat, double t) {
  if (f_stat == 0) throw Error(ErrorCode::kDivisionByZero, "static FLOPs are zero");
  const double d = f_dyn / f_stat - t;
  return d * d;
}

double bounds_loss(std::span<const double> rates, double lower, double upper) {
  if (!(0 <= lower && lower <= upper && upper <= 1)) {
    throw Error(ErrorCode::kInvalidArgument, "bounds must satisfy 0 <= lower <= upper <= 1");
  }
  double loss = 0.0;
  for (const double r : rates) {
    const double below = std::max(0.0, lower - r);
    const double above = std::max(0.0, r - upper);
    loss += below * below + above * above;
  }
  return loss;
}

double kd_loss(std::span<const double> student, std::span<const double> teacher, double temperature) {
  if (student.size() != teacher.size()) {
    throw Error(ErrorCode::kLengthMismatch, "student has " + std::to_string(student.size()) + " logits, teacher has " +
                                                std::to_string(teacher.size()));
  }
  if (!(temperature > 0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be positive");
  if (student.empty()) return 0.0;
  const auto ls = log_softmax(student, temperature);
  const auto lt = log_softmax(teacher, temperature);
  double kl = 0.0;
  for (std::size_t i = 0; i < ls.size(); ++i) kl += std::exp(ls[i]) * (ls[i] - lt[i]);
  return temperature * temperature * std::max(kl, 0.0);
}

double total_loss(double task, double flops, double bounds, double kd, const TrainingConfig& cfg) {
  return task + cfg.alpha * (flops + bounds) + cfg.beta * kd;
}

double tau_schedule(std::int64_t step, const TrainingConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw Error(ErrorCode::kStepOutOfRange,
                "step " + std::to_string(step) + " outside [0, " + std::to_string(cfg.total_steps) + "]");
  }
  if (!(cfg.tau_end > 0) || cfg.tau_start < cfg.tau_end) {
    throw Error(ErrorCode::kInvalidArgument, "need tau_start >= tau_end > 0");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.tau_start * std::pow(cfg.tau_end / cfg.tau_start, frac);
}

}  // namespace dynlat
