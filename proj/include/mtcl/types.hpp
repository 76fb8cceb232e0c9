#pragma once

#include <string>

#include "mtcl/errors.hpp"

namespace mtcl {

enum class Task { invasion, meningioma };
enum class Modality { t1c, flairc, adc };
enum class Scale { full, tiny };
enum class Mode { train, eval };

inline const char* to_string(Task t) { return t == Task::invasion ? "invasion" : "meningioma"; }

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::t1c: return "t1c";
    case Modality::flairc: return "flairc";
    default: return "adc";
  }
}

inline const char* to_string(Scale s) { return s == Scale::full ? "full" : "tiny"; }

inline Scale parse_scale(const std::string& s) {
  if (s == "full") return Scale::full;
  if (s == "tiny") return Scale::tiny;
  throw ConfigError("unknown scale '" + s + "' (expected full|tiny)");
}

}  // namespace mtcl
