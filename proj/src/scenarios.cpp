#include "fedshadow/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace fedshadow {

namespace {

AttackConfig strong_attack(int victim, int target, std::size_t n_rounds) {
    AttackConfig a;
    a.victim_class = victim;
    a.target_class = target;
    a.n_malicious = 10;
    a.window_start = 1;
    a.window_end = n_rounds;
    a.availability_bias = 0.7;
    return a;
}

Scenario make(std::string name, std::string description, std::optional<AttackConfig> attack,
              std::size_t n_rounds = kDeskRounds) {
    Scenario s{std::move(name), std::move(description), {}};
    s.config.n_rounds = n_rounds;
    s.config.attack = std::move(attack);
    return s;
}

std::vector<Scenario> build_catalog() {
    std::vector<Scenario> out;
    out.push_back(make("clean", "No attack; baseline for every comparison.", std::nullopt));

    struct Pair {
        const char* name;
        const char* label;
        int victim;
        int target;
    };
    const Pair pairs[] = {
        {"label-dog-cat", "CIFAR-10 dog -> cat", 5, 3},
        {"label-airplane-bird", "CIFAR-10 airplane -> bird", 0, 2},
        {"label-auto-truck", "CIFAR-10 automobile -> truck", 1, 9},
        {"label-deer-horse", "CIFAR-10 deer -> horse", 4, 7},
        {"label-tshirt-shirt", "Fashion-MNIST T-shirt/top -> shirt", 0, 6},
        {"label-trouser-dress", "Fashion-MNIST trouser -> dress", 1, 3},
        {"label-coat-pullover", "Fashion-MNIST coat -> pullover", 4, 2},
        {"label-sneaker-boot", "Fashion-MNIST sneaker -> ankle boot", 7, 9},
    };
    for (const auto& p : pairs) {
        out.push_back(make(p.name,
                           std::string(p.label) + " class pair on the desk dataset; 10 of 50 malicious, "
                                                  "availability 0.7, attack in every round.",
                           strong_attack(p.victim, p.target, kDeskRounds)));
    }

    struct Timing {
        const char* name;
        std::size_t reference_start;
    };
    const Timing timings[] = {{"timing-early", 20}, {"timing-mid", 70}, {"timing-late", 160}};
    for (const auto& t : timings) {
        auto desk = strong_attack(1, 9, kDeskRounds);
        const auto window = timed_attack(scale_round(t.reference_start), kDeskRounds);
        desk.window_start = window.window_start;
        desk.window_end = window.window_end;
        out.push_back(make(t.name,
                           "Label 1 -> 9 for a quarter of the rounds, starting at reference round " +
                               std::to_string(t.reference_start) + " of 200 (round " +
                               std::to_string(desk.window_start) + " of 60).",
                           desk));

        auto full = strong_attack(1, 9, kReferenceRounds);
        const auto ref_window = timed_attack(t.reference_start, kReferenceRounds);
        full.window_start = ref_window.window_start;
        full.window_end = ref_window.window_end;
        out.push_back(make(std::string(t.name) + "-200",
                           "Unscaled 200-round schedule, attack from round " + std::to_string(t.reference_start) +
                               " to " + std::to_string(full.window_end) + ".",
                           full, kReferenceRounds));
    }
    {
        auto first = strong_attack(1, 9, kDeskRounds);
        first.window_end = timed_attack(1, kDeskRounds).window_end;
        out.push_back(make("timing-first-quarter", "Label 1 -> 9 during the first quarter of the rounds only.", first));
    }

    for (double p : {0.3, 0.5, 0.7, 0.9}) {
        auto a = strong_attack(1, 9, kDeskRounds);
        a.availability_bias = p;
        char value[16];
        std::snprintf(value, sizeof value, "%.1f", p);
        out.push_back(make(std::string("availability-") + value,
                           std::string("Each participant slot is drawn from the malicious pool with probability ") +
                               value + "; 10 of 50 malicious, label 1 -> 9.",
                           a));
    }

    for (std::size_t m : {5, 10, 30}) {
        auto a = strong_attack(1, 9, kDeskRounds);
        a.n_malicious = m;
        a.availability_bias.reset();
        out.push_back(make("poison-" + std::to_string(m) + "of50",
                           std::to_string(m) + " of 50 clients flip 1 -> 9; uniform participant selection.", a));
    }
    return out;
}

}  // namespace

std::size_t scale_round(std::size_t reference_round, std::size_t desk_rounds) {
    const double scaled = static_cast<double>(reference_round) * static_cast<double>(desk_rounds) /
                          static_cast<double>(kReferenceRounds);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(scaled)));
}

AttackConfig timed_attack(std::size_t start, std::size_t n_rounds, double fraction_of_rounds) {
    AttackConfig a;
    const auto length = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction_of_rounds * static_cast<double>(n_rounds))));
    a.window_start = start;
    a.window_end = std::min(n_rounds, start + length - 1);
    return a;
}

const std::vector<Scenario>& scenario_catalog() {
    static const std::vector<Scenario> catalog = build_catalog();
    return catalog;
}

std::optional<Scenario> find_scenario(const std::string& name) {
    for (const auto& s : scenario_catalog())
        if (s.name == name) return s;
    return std::nullopt;
}

}  // namespace fedshadow
