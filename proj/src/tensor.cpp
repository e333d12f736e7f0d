#include "unipose/tensor.hpp"

#include <cmath>
#include <sstream>

namespace unipose::diff {

std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

void check_finite(const Tensor& t, const char* where) {
  for (double v : t.data) {
    if (!std::isfinite(v))
      throw NonFiniteValue(std::string(where) + ": non-finite value in tensor " +
                           shape_str(t.shape));
  }
}

}  // namespace unipose::diff
