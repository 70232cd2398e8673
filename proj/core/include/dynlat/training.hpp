#pragma once

// Scalar training objectives and the masker temperature schedule.

#include <cstdint>
#include <span>

namespace dynlat {

struct TrainingConfig {
  double target_t = 0.5;
  double alpha = 10.0;
  double beta = 0.5;
  double kd_temperature = 4.0;
  double tau_start = 5.0;
  double tau_end = 0.1;
  std::int64_t total_steps = 1;

  void validate() const;
};

/// (f_dyn / f_stat - t)^2
double flops_loss(double f_dyn, double f_stat, double t);

/// Sum over blocks of max(0, lower - r)^2 + max(0, r - upper)^2.
double bounds_loss(std::span<const double> rates, double lower, double upper);

/// T^2 * KL(softmax(student / T) || softmax(teacher / T)), from raw logits.
double kd_loss(std::span<const double> student, std::span<const double> teacher, double temperature);

/// task + alpha * (flops + bounds) + beta * kd
double total_loss(double task, double flops, double bounds, double kd, const TrainingConfig& cfg);

/// tau_start * (tau_end / tau_start)^(step / total_steps)
double tau_schedule(std::int64_t step, const TrainingConfig& cfg);

}  // namespace dynlat
