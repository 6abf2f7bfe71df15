#pragma once

// Bundled scenario catalog on the desk dataset (10-class blobs).

#include <optional>
#include <string>
#include <vector>

#include "fedshadow/federation.hpp"

namespace fedshadow {

struct Scenario {
    std::string name;
    std::string description;
    FederationConfig config;
};

/// Rounds of the reference 200-round schedule and the desk default.
inline constexpr std::size_t kReferenceRounds = 200;
inline constexpr std::size_t kDeskRounds = 60;

/// Maps a round of the 200-round schedule onto `desk_rounds` (rounded, at least 1).
std::size_t scale_round(std::size_t reference_round, std::size_t desk_rounds = kDeskRounds);

/// Attack window of `fraction_of_rounds` length starting at `start`, clipped to n_rounds.
AttackConfig timed_attack(std::size_t start, std::size_t n_rounds, double fraction_of_rounds = 0.25);

const std::vector<Scenario>& scenario_catalog();

std::optional<Scenario> find_scenario(const std::string& name);

}  // namespace fedshadow
