#pragma once

#include <cstdint>
#include <string_view>

#include "fsc/encoders.hpp"

namespace fsc {

/// Binary crack label. The numeric value doubles as the class index into
/// prompt lists: prompt 0 describes no_crack, prompt 1 describes crack.
enum class Label : std::uint8_t { no_crack = 0, crack = 1 };

inline constexpr Label kPositiveLabel = Label::crack;
inline constexpr std::size_t kNumClasses = 2;

inline constexpr std::string_view kCrackPrompt = "A picture with cracks";
inline constexpr std::string_view kNoCrackPrompt = "A picture without cracks";

inline std::size_t class_index(Label l) { return static_cast<std::size_t>(l); }

std::string_view to_string(Label l);
/// Accepts "crack" / "no_crack"; throws ParseError otherwise.
Label parse_label(std::string_view s);

struct LabeledFeature {
  FeatureVector feature;
  Label label = Label::no_crack;

  friend bool operator==(const LabeledFeature&, const LabeledFeature&) = default;
};

}  // namespace fsc
