#include "xpl/types.hpp"

#include <stdexcept>
#include <string>

namespace xpl {

ModelTag parse_tag(std::string_view s) {
  if (s == "A") return ModelTag::A;
  if (s == "B") return ModelTag::B;
  throw std::invalid_argument("unknown model tag '" + std::string(s) + "'");
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Labeled: return "labeled";
    case Split::Unlabeled: return "unlabeled";
    case Split::Test: return "test";
    case Split::OpensetTest: return "openset_test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  for (auto sp : {Split::Labeled, Split::Unlabeled, Split::Test, Split::OpensetTest}) {
    if (split_name(sp) == s) return sp;
  }
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

}  // namespace xpl
