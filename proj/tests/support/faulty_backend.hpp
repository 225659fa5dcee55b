#pragma once

#include "pedsynth/error.hpp"
#include "pedsynth/generation.hpp"

#include <atomic>
#include <functional>
#include <string>

namespace fixtures {

// Mock backend that throws for every request matching a predicate.
class FaultyBackend : public pedsynth::MockBackend {
  public:
    using Predicate = std::function<bool(const pedsynth::GenerationRequest &)>;

    explicit FaultyBackend(Predicate fail, int max_concurrency = 4)
        : MockBackend(8, max_concurrency), fail_(std::move(fail)) {}

    // Fails whenever the prompt contains `trigger`.
    static FaultyBackend on_prompt(std::string trigger) {
        return FaultyBackend([trigger](const pedsynth::GenerationRequest &r) {
            return r.prompt.find(trigger) != std::string::npos;
        });
    }

    [[nodiscard]] std::string id() const override { return "faulty-mock"; }

    pedsynth::Image generate(const pedsynth::GenerationRequest &r) override {
        ++calls_;
        if (fail_(r)) throw pedsynth::BackendError("injected failure");
        return MockBackend::generate(r);
    }

    long calls() const { return calls_.load(); }

  private:
    Predicate fail_;
    std::atomic<long> calls_{0};
};

} // namespace fixtures
