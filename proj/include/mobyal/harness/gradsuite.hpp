#pragma once

#include <vector>

#include "mobyal/numcore/gradcheck.hpp"

namespace mobyal::harness {

// numcore's suite plus the elementwise ops, the model paths (encoder,
// classifier, query embedding under every predictor/projector toggle) and
// the contrastive losses.
std::vector<numcore::GradCheckCase> run_full_gradient_suite(int seeds = 20, double eps = 1e-5,
                                                            double tolerance = 1e-3);

}  // namespace mobyal::harness
