#pragma once

#include <stdexcept>
#include <string>

namespace mmc {

/// Input that violates an operation's precondition.
class InvalidInput : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Operation invoked on an object in the wrong state (uninitialized model, mismatched trees).
class StateError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// A loss term produced NaN/Inf during training.
class TrainingDivergence : public std::runtime_error {
  public:
    TrainingDivergence(std::string term, long step)
        : std::runtime_error("training diverged: non-finite " + term + " at step " + std::to_string(step)),
          term_(std::move(term)), step_(step) {}

    const std::string& term() const { return term_; }
    long step() const { return step_; }

  private:
    std::string term_;
    long step_;
};

/// Missing or undecodable file.
class LoadError : public std::runtime_error {
  public:
    LoadError(const std::string& path, const std::string& reason)
        : std::runtime_error("cannot load '" + path + "': " + reason), path_(path) {}

    const std::string& path() const { return path_; }

  private:
    std::string path_;
};

/// Existing feature cache was produced by a different checkpoint.
class CacheConflict : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace mmc
