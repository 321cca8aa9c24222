#pragma once
// Exact half-integer bookkeeping for angular momentum quantum numbers.
// Values are stored as twice their physical value so that 1/2, 3/2, ...
// are represented without rounding and parity checks stay exact.

#include <compare>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace serfsim {

struct HalfInt {
    int twice = 0;

    constexpr HalfInt() = default;
    constexpr explicit HalfInt(int twice_value) : twice(twice_value) {}

    static constexpr HalfInt from_twice(int t) { return HalfInt(t); }
    static constexpr HalfInt whole(int n) { return HalfInt(2 * n); }

    [[nodiscard]] constexpr double value() const { return 0.5 * twice; }
    [[nodiscard]] constexpr bool is_whole() const { return twice % 2 == 0; }
    [[nodiscard]] constexpr bool nonnegative() const { return twice >= 0; }

    friend constexpr bool operator==(HalfInt, HalfInt) = default;
    friend constexpr auto operator<=>(HalfInt, HalfInt) = default;
    friend constexpr HalfInt operator+(HalfInt a, HalfInt b) { return HalfInt(a.twice + b.twice); }
    friend constexpr HalfInt operator-(HalfInt a, HalfInt b) { return HalfInt(a.twice - b.twice); }
    friend constexpr HalfInt operator-(HalfInt a) { return HalfInt(-a.twice); }
};

inline std::string to_string(HalfInt h) {
    if (h.is_whole()) return std::to_string(h.twice / 2);
    return std::to_string(h.twice) + "/2";
}

// Throws unless `j` is a valid angular momentum magnitude (j >= 0).
inline void require_magnitude(HalfInt j, const char* what) {
    if (!j.nonnegative())
        throw std::invalid_argument(std::string(what) + " must be a nonnegative half-integer, got " +
                                    to_string(j));
}

}  // namespace serfsim
