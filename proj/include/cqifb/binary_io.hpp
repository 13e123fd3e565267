#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "cqifb/errors.hpp"

namespace cqifb::binio {

// Little-endian scalar encoding, independent of host byte order.

template <typename T>
    requires std::is_arithmetic_v<T>
void write(std::ostream& out, T value) {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    U bits;
    std::memcpy(&bits, &value, sizeof(T));
    std::array<char, sizeof(T)> bytes{};
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(bytes.data(), bytes.size());
}

template <typename T>
    requires std::is_arithmetic_v<T>
T read(std::istream& in) {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    std::array<char, sizeof(T)> bytes{};
    if (!in.read(bytes.data(), bytes.size())) throw FormatError("unexpected end of file");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        bits |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes[i])) << (8 * i));
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
}

inline void write_magic(std::ostream& out, std::string_view magic) {
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, std::string_view magic) {
    std::string got(magic.size(), '\0');
    if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic)
        throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
}

}  // namespace cqifb::binio
