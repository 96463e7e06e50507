#pragma once

#include <stdexcept>
#include <string>

namespace toon3d {

// Base of every error the library throws. `module()` names the subsystem so
// the CLI can print a one-line attributed message.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what) : std::runtime_error(what), module_(std::move(module)) {}
  const std::string& module() const { return module_; }

 private:
  std::string module_;
};

class LoadError : public Error {
 public:
  explicit LoadError(const std::string& what) : Error("scene", what) {}
};

class StructuralError : public Error {
 public:
  explicit StructuralError(const std::string& what) : Error("scene", what) {}
};

class RangeError : public Error {
 public:
  RangeError(std::string module, const std::string& what) : Error(std::move(module), what) {}
};

class NormalizationError : public Error {
 public:
  explicit NormalizationError(const std::string& what) : Error("scene", what) {}
};

class DegenerateInputError : public Error {
 public:
  DegenerateInputError(std::string module, const std::string& what) : Error(std::move(module), what) {}
};

class EvaluationError : public Error {
 public:
  EvaluationError(std::string module, const std::string& what) : Error(std::move(module), what) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error("optimizer", what) {}
};

class IoError : public Error {
 public:
  IoError(std::string module, const std::string& what) : Error(std::move(module), what) {}
};

}  // namespace toon3d
