#include "freemcg/rng.hpp"

namespace freemcg {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

RngStream RngStream::derive(std::uint64_t master, std::string_view purpose,
                            std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = fnv1a64(purpose.data(), purpose.size());
    std::uint64_t s = mix64(master);
    s = mix64(s ^ h);
    s = mix64(s ^ a);
    s = mix64(s ^ b);
    return RngStream(s);
}

}  // namespace freemcg
