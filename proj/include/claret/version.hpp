#ifndef CLARET_VERSION_HPP
#define CLARET_VERSION_HPP

namespace claret {
inline constexpr const char* kToolVersion = "0.1.0";
}

#endif
