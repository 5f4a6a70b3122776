#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace drtl::train {

struct TrainingError : std::runtime_error {
    int64_t step;
    explicit TrainingError(const std::string& what, int64_t step_index)
        : std::runtime_error(what + " (step " + std::to_string(step_index) + ")"),
          step(step_index) {}
};

}  // namespace drtl::train
