#pragma once

// Strict JSON object reading: every key must be consumed, numeric ranges are
// checked, and every diagnostic carries the dotted key path.

#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace clab {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  enum class Kind { Malformed, MissingField, UnknownKey, OutOfRange, WrongType };

  ConfigError(Kind kind, std::string path, const std::string& message)
      : std::runtime_error(label(kind) + " at '" + path + "': " + message), kind_(kind), path_(std::move(path)) {}

  Kind kind() const { return kind_; }
  const std::string& path() const { return path_; }

 private:
  static std::string label(Kind k) {
    switch (k) {
      case Kind::Malformed:
        return "malformed JSON";
      case Kind::MissingField:
        return "missing field";
      case Kind::UnknownKey:
        return "unknown key";
      case Kind::OutOfRange:
        return "value out of range";
      case Kind::WrongType:
        return "wrong type";
    }
    return "config error";
  }

  Kind kind_;
  std::string path_;
};

/// Reads fields of one JSON object; finish() rejects keys that were never read.
class StrictReader {
 public:
  StrictReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(ConfigError::Kind::WrongType, path_or_root(), "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(ConfigError::Kind::MissingField, child(key), "required");
    return j_.at(key);
  }

  template <typename T>
  T require(const std::string& key) {
    return convert<T>(raw(key), child(key));
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(j_.at(key), child(key));
  }

  std::optional<StrictReader> object(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return StrictReader(j_.at(key), child(key));
  }

  double number(const std::string& key, double fallback, double lo, double hi, bool lo_open = false) {
    const double v = get<double>(key, fallback);
    check_range(key, v, lo, hi, lo_open);
    return v;
  }

  void check_range(const std::string& key, double v, double lo, double hi, bool lo_open = false) const {
    const bool bad = !std::isfinite(v) || (lo_open ? v <= lo : v < lo) || v > hi;
    if (bad) {
      throw ConfigError(ConfigError::Kind::OutOfRange, child(key),
                        std::string(key) + " = " + Json(v).dump() + " not in " + (lo_open ? "(" : "[") +
                            Json(lo).dump() + ", " + Json(hi).dump() + "]");
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError(ConfigError::Kind::UnknownKey, child(it.key()), "'" + it.key() + "' is not recognized");
      }
    }
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_or_root() const { return path_.empty() ? "<root>" : path_; }

  template <typename T>
  static T convert(const Json& v, const std::string& path) {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(ConfigError::Kind::WrongType, path, "expected a number");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw ConfigError(ConfigError::Kind::WrongType, path, "expected an integer");
        if (std::is_unsigned_v<T> && v.get<long long>() < 0) {
          throw ConfigError(ConfigError::Kind::OutOfRange, path, "must be non-negative");
        }
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(ConfigError::Kind::WrongType, path, "expected a string");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(ConfigError::Kind::WrongType, path, "expected a boolean");
      }
      return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(ConfigError::Kind::WrongType, path, e.what());
    }
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace clab
