#pragma once

#include <stdexcept>
#include <string>

namespace phonssm {

/// Input is structurally valid but numerically degenerate (zero-norm vector,
/// vanishing palm, both hands missing, ...).
class degenerate_input : public std::runtime_error {
public:
    explicit degenerate_input(const std::string& what) : std::runtime_error(what) {}
};

/// On-disk container is corrupt, truncated or has an unknown version.
class format_error : public std::runtime_error {
public:
    explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace phonssm
