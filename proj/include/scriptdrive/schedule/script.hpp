#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scriptdrive/planners.hpp"

namespace scriptdrive::schedule {

using planners::AtomicBehavior;

enum class Atom {
  speed,
  lane,
  elapsed,
  total_elapsed,
  gap_front,
  gap_rear,
  gap_left_front,
  gap_left_rear,
  gap_right_front,
  gap_right_rear,
  ttc_front,
  dist_traveled,
  at_leftmost,
  at_rightmost,
  stopped,
};

std::string_view to_string(Atom atom);
std::optional<Atom> atom_from_string(std::string_view text);
bool is_boolean_atom(Atom atom);

enum class CompareOp { lt, le, gt, ge, eq };
std::string_view to_string(CompareOp op);

struct Operand {
  bool is_atom = false;
  Atom atom = Atom::speed;
  double number = 0.0;

  bool operator==(const Operand&) const = default;
};

/// Boolean expression tree. `children` is used by all_of / any_of (two or
/// more) and negate (exactly one).
struct Predicate {
  enum class Kind { compare, flag, all_of, any_of, negate };

  Kind kind = Kind::flag;
  CompareOp op = CompareOp::lt;
  Operand lhs;
  Operand rhs;
  Atom flag = Atom::stopped;
  std::vector<Predicate> children;

  bool operator==(const Predicate&) const = default;

  static Predicate compare(Operand lhs, CompareOp op, Operand rhs);
  static Predicate boolean(Atom atom);
  static Predicate all(std::vector<Predicate> parts);
  static Predicate any(std::vector<Predicate> parts);
  static Predicate negation(Predicate inner);
};

enum class TimeoutPolicy { skip, fail };

inline constexpr double kDefaultStageTimeout = 15.0;
inline constexpr int kDefaultClearAfter = 5;

struct Stage {
  AtomicBehavior behavior = AtomicBehavior::lane_keeping;
  std::optional<double> target_speed;
  std::optional<Predicate> when;
  std::optional<Predicate> until;  // empty = the behavior's completion set
  double timeout = kDefaultStageTimeout;
  TimeoutPolicy on_timeout = TimeoutPolicy::skip;

  bool operator==(const Stage&) const = default;
};

struct FallbackRule {
  AtomicBehavior behavior = AtomicBehavior::decelerate;
  Predicate when;
  int clear_after = kDefaultClearAfter;

  bool operator==(const FallbackRule&) const = default;
};

struct ScheduleScript {
  std::vector<Stage> stages;
  std::vector<FallbackRule> fallbacks;
  std::string source_text;

  /// Structural equality; the source text is not compared.
  bool operator==(const ScheduleScript& other) const {
    return stages == other.stages && fallbacks == other.fallbacks;
  }
};

class ScriptError : public std::runtime_error {
 public:
  ScriptError(const std::string& message, int line, int column);
  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string detail_;
  int line_;
  int column_;
};

class ParseError : public ScriptError {
 public:
  using ScriptError::ScriptError;
};

class ValidationError : public ScriptError {
 public:
  using ScriptError::ScriptError;
};

/// The accepted language, in the form shown to the interpreter backend.
extern const std::string_view kGrammarText;

ScheduleScript parse_script(std::string_view text);
std::string render(const ScheduleScript& script);
std::string render(const Predicate& predicate);
/// Shortest text that reads back to the same double; always has a '.' or exponent.
std::string format_number(double value);

}  // namespace scriptdrive::schedule
