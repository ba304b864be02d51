#pragma once

// Central-difference verification of every differentiable operation and of
// both adversarial losses on a tiny model.

#include <cstdint>
#include <string>
#include <vector>

#include "degan/model.hpp"

namespace degan {

struct GradCheckCase {
    std::string name;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return max_error <= tolerance; }
};

struct GradCheckReport {
    std::vector<GradCheckCase> cases;
    double max_error = 0.0;
    double seconds = 0.0;
    bool passed() const;
};

/// 4x4 images, 2 expressions, 2 identities, 6-dimensional representation.
DeGanConfig tiny_model_config();

/// Overwrites every parameter with N(0, stddev^2) draws so that no gradient
/// coordinate is small enough to drown in finite-difference rounding noise.
void randomize_parameters(DeGanModel& model, double stddev, std::uint64_t seed);

double check_generator_loss(DeGanModel& model, std::uint64_t seed);
double check_discriminator_loss(DeGanModel& model, std::uint64_t seed);

GradCheckReport run_gradcheck_suite(std::uint64_t seed = 1, double tolerance = 1e-4);

}  // namespace degan
