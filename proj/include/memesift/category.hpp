#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace memesift {

/// Social domain of a meme. Integer codes are stable and used as class indices.
enum class Category : std::size_t { Kitchen = 0, Leadership = 1, Working = 2, Shopping = 3, Other = 4 };

inline constexpr std::size_t kCategoryCount = 5;

inline constexpr std::array<Category, kCategoryCount> kAllCategories{
    Category::Kitchen, Category::Leadership, Category::Working, Category::Shopping, Category::Other};

inline constexpr std::string_view category_name(Category c) noexcept {
  constexpr std::array<std::string_view, kCategoryCount> names{"Kitchen", "Leadership", "Working",
                                                               "Shopping", "Other"};
  return names[static_cast<std::size_t>(c)];
}

inline constexpr std::size_t category_index(Category c) noexcept { return static_cast<std::size_t>(c); }

inline std::optional<Category> parse_category(std::string_view name) {
  for (Category c : kAllCategories) {
    if (category_name(c) == name) return c;
  }
  return std::nullopt;
}

/// Relation between caption and overlaid text.
enum class TextKind { Different, Same, Image };

inline constexpr std::string_view text_kind_name(TextKind k) noexcept {
  switch (k) {
    case TextKind::Different: return "Different";
    case TextKind::Same: return "Same";
    case TextKind::Image: return "Image";
  }
  return "";
}

inline std::optional<TextKind> parse_text_kind(std::string_view name) {
  for (TextKind k : {TextKind::Different, TextKind::Same, TextKind::Image}) {
    if (text_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

}  // namespace memesift
