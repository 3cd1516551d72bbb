#include "rtbagent/common.hpp"

#include <charconv>
#include <numeric>

namespace rtb {

namespace {

std::int64_t parse_int(std::string_view s, std::string_view whole) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InvalidParams("invalid fraction '" + std::string(whole) + "'");
  }
  return v;
}

}  // namespace

Fraction Fraction::parse(std::string_view text) {
  Fraction f;
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    f.num = parse_int(text.substr(0, slash), text);
    f.den = parse_int(text.substr(slash + 1), text);
  } else if (auto dot = text.find('.'); dot != std::string_view::npos) {
    const auto int_part = text.substr(0, dot);
    const auto frac_part = text.substr(dot + 1);
    if (frac_part.empty() || frac_part.size() > 12) {
      throw InvalidParams("invalid fraction '" + std::string(text) + "'");
    }
    f.den = 1;
    for (std::size_t i = 0; i < frac_part.size(); ++i) f.den *= 10;
    const std::int64_t whole = int_part.empty() ? 0 : parse_int(int_part, text);
    f.num = whole * f.den + parse_int(frac_part, text);
  } else {
    f.num = parse_int(text, text);
    f.den = 1;
  }
  if (f.num <= 0 || f.den <= 0) {
    throw InvalidParams("fraction must be positive: '" + std::string(text) + "'");
  }
  return f.reduced();
}

Fraction Fraction::reduced() const {
  const std::int64_t g = std::gcd(num, den);
  return g == 0 ? *this : Fraction{num / g, den / g};
}

std::string Fraction::to_string() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

std::string Fraction::slug() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "-" + std::to_string(den);
}

Money scale_floor(Money amount, const Fraction& f) {
  const __int128 p = static_cast<__int128>(amount) * f.num;
  __int128 q = p / f.den;
  if (p % f.den != 0 && p < 0) --q;
  return static_cast<Money>(q);
}

}  // namespace rtb
