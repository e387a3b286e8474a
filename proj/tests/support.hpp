#pragma once

#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "skillflow/registry.hpp"

namespace testsupport {

inline std::string fixture_path(const std::string& name) { return std::string(SKILLFLOW_FIXTURE_DIR) + "/" + name; }

inline std::string read_fixture(const std::string& name) {
    std::ifstream in(fixture_path(name), std::ios::binary);
    if (!in) throw std::runtime_error("missing fixture " + name);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline skillflow::Registry festo_registry() { return skillflow::load_registry(read_fixture("festo_registry.json")); }

/// Seeded generator so property tests replay.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    bool coin() { return uniform(0, 1) == 1; }

private:
    std::mt19937_64 engine_;
};

} // namespace testsupport
