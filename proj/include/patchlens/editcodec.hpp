#pragma once

#include <algorithm>
#include <cstddef>
#include <string_view>
#include <vector>

#include "patchlens/text.hpp"

namespace patchlens::editcodec {

enum class EditClass { NoChange, AddOnly, DeleteOnly, Replace };

inline std::string_view to_string(EditClass c) {
  switch (c) {
    case EditClass::NoChange: return "NoChange";
    case EditClass::AddOnly: return "AddOnly";
    case EditClass::DeleteOnly: return "DeleteOnly";
    case EditClass::Replace: return "Replace";
  }
  return "?";
}

/// Pointer form of a single-hunk edit over a bug of length n:
/// keep bug[0, insert_ptr), emit `inserted`, resume at bug[delete_ptr].
/// An empty deletion is encoded as insert_ptr == delete_ptr.
template <class T>
struct EditScript {
  std::size_t insert_ptr = 0;
  std::size_t delete_ptr = 0;
  std::vector<T> inserted;

  friend bool operator==(const EditScript&, const EditScript&) = default;
};

inline EditClass classify(std::size_t insert_ptr, std::size_t delete_ptr, bool inserted_empty) {
  const bool span_empty = insert_ptr == delete_ptr;
  if (span_empty) return inserted_empty ? EditClass::NoChange : EditClass::AddOnly;
  return inserted_empty ? EditClass::DeleteOnly : EditClass::Replace;
}

template <class T>
EditClass classify(const EditScript<T>& s) {
  return classify(s.insert_ptr, s.delete_ptr, s.inserted.empty());
}

/// Longest common prefix first, then the longest common suffix that does
/// not overlap it.
template <class T>
EditScript<T> diff(const std::vector<T>& bug, const std::vector<T>& patch) {
  const std::size_t limit = std::min(bug.size(), patch.size());
  std::size_t p = 0;
  while (p < limit && bug[p] == patch[p]) ++p;
  std::size_t s = 0;
  while (s < limit - p && bug[bug.size() - 1 - s] == patch[patch.size() - 1 - s]) ++s;

  EditScript<T> out;
  out.insert_ptr = p;
  out.delete_ptr = bug.size() - s;
  out.inserted.assign(patch.begin() + static_cast<std::ptrdiff_t>(p),
                      patch.end() - static_cast<std::ptrdiff_t>(s));
  return out;
}

template <class T>
bool pointers_valid(std::size_t bug_len, const EditScript<T>& s) {
  return s.insert_ptr <= s.delete_ptr && s.delete_ptr <= bug_len;
}

template <class T>
std::vector<T> apply(const std::vector<T>& bug, const EditScript<T>& s) {
  if (!pointers_valid(bug.size(), s)) throw Error("editcodec::apply: pointers out of range");
  std::vector<T> out(bug.begin(), bug.begin() + static_cast<std::ptrdiff_t>(s.insert_ptr));
  out.insert(out.end(), s.inserted.begin(), s.inserted.end());
  out.insert(out.end(), bug.begin() + static_cast<std::ptrdiff_t>(s.delete_ptr), bug.end());
  return out;
}

/// Prefix and suffix maximality of a script produced by diff().
template <class T>
bool is_maximal(const std::vector<T>& bug, const std::vector<T>& patch, const EditScript<T>& s) {
  const std::size_t p = s.insert_ptr;
  const std::size_t suffix = bug.size() - s.delete_ptr;
  const std::size_t limit = std::min(bug.size(), patch.size());
  if (p + suffix > limit) return false;
  for (std::size_t i = 0; i < p; ++i)
    if (!(bug[i] == patch[i])) return false;
  for (std::size_t i = 0; i < suffix; ++i)
    if (!(bug[bug.size() - 1 - i] == patch[patch.size() - 1 - i])) return false;
  const bool prefix_stops = p == limit || !(bug[p] == patch[p]);
  const bool suffix_stops =
      p + suffix == limit || !(bug[bug.size() - 1 - suffix] == patch[patch.size() - 1 - suffix]);
  return prefix_stops && suffix_stops;
}

}  // namespace patchlens::editcodec
