#pragma once

#include <stdexcept>
#include <string>

namespace puridiff {

// Bad arguments / malformed configs. CLI maps these to exit code 2.
class argument_error : public std::invalid_argument {
public:
    explicit argument_error(const std::string& what) : std::invalid_argument(what) {}
};

class config_error : public argument_error {
public:
    explicit config_error(const std::string& what) : argument_error(what) {}
};

// Non-finite values, diverged training, failed iterations. Exit code 3.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

class training_error : public numerical_error {
public:
    explicit training_error(const std::string& what) : numerical_error(what) {}
};

}  // namespace puridiff
