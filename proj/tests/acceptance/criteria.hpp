#ifndef CLARET_TESTS_CRITERIA_HPP
#define CLARET_TESTS_CRITERIA_HPP

#include <doctest.h>

#include <cstdio>
#include <string>

// One visible verdict line per acceptance criterion, plus the doctest assert.
inline void criterion_line(int number, const std::string& description, bool pass) {
    std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", number, description.c_str());
    std::fflush(stdout);
    CHECK_MESSAGE(pass, "criterion " << number << " failed: " << description);
}

#endif
