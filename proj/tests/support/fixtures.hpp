#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <numeric>
#include <vector>

#include <unistd.h>

#include "hetcate/core_model.hpp"
#include "hetcate/rng.hpp"

namespace fixtures {

/// rows x (d+1) design with a leading column of ones and N(0,1) entries.
inline hetcate::Matrix gaussian_design(hetcate::Index rows, hetcate::Index d, std::uint64_t seed) {
    hetcate::Rng rng(seed);
    hetcate::Matrix x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d + 1));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        x(i, 0) = 1.0;
        for (Eigen::Index j = 1; j < x.cols(); ++j) x(i, j) = rng.normal();
    }
    return x;
}

inline std::vector<hetcate::Index> iota(hetcate::Index count) {
    std::vector<hetcate::Index> v(count);
    std::iota(v.begin(), v.end(), hetcate::Index{0});
    return v;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("hetcate_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace fixtures
