#pragma once

#include "pedsynth/dataset.hpp"
#include "pedsynth/rng.hpp"

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>

namespace fixtures {

// Random annotation vector that respects exclusive categories: each
// exclusive category gets at most one positive, other attributes are
// positive with probability p.
inline pedsynth::AttributeVector random_vector(const pedsynth::AttributeSchema &schema, pedsynth::Rng &rng,
                                               double p = 0.3) {
    pedsynth::AttributeVector v(schema.size());
    for (const auto &cat : schema.categories()) {
        if (cat.exclusive) {
            const auto pick = rng.below(cat.attributes.size() + 1);
            if (pick < cat.attributes.size()) v.set(*schema.index_of(cat.attributes[pick]));
        } else {
            for (const auto &a : cat.attributes)
                if (rng.uniform() < p) v.set(*schema.index_of(a));
        }
    }
    return v;
}

inline pedsynth::PedestrianSample make_sample(std::string id, pedsynth::AttributeVector v,
                                              pedsynth::Split split = pedsynth::Split::train) {
    pedsynth::PedestrianSample s;
    s.sample_id = id;
    s.image_path = "images/" + id + ".png";
    s.attributes = std::move(v);
    s.split = split;
    return s;
}

inline pedsynth::DatasetManifest random_manifest(const pedsynth::AttributeSchema &schema, std::size_t n,
                                                 std::uint64_t seed) {
    pedsynth::Rng rng(seed);
    pedsynth::DatasetManifest m;
    m.schema = schema;
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "s%04zu", i);
        m.samples.push_back(make_sample(id, random_vector(schema, rng)));
    }
    return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string &tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("pedsynth_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;

    const std::filesystem::path &path() const { return path_; }

  private:
    std::filesystem::path path_;
};

} // namespace fixtures

