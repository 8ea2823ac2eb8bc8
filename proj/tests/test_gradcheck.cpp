#include <chrono>
#include <cmath>

#include "doctest.h"
#include "unlab/objectives.hpp"
#include "unlab/rng.hpp"

using namespace unlab;

// Central finite differences (h = 1e-4) against reverse-mode gradients on a
// width-32 model, >= 20 randomly chosen parameters per objective.

namespace {

constexpr double kH = 1e-4;
constexpr double kRelTol = 1e-4;

ModelState check_model(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.vocab = 48;
    cfg.width = 32;
    cfg.depth = 2;
    cfg.ff_width = 32;
    cfg.context = 16;
    return init_model(cfg, seed);
}

Batch random_batch(Rng& rng, int n, int vocab) {
    Batch b;
    for (int i = 0; i < n; ++i) {
        BatchItem item;
        item.question = {static_cast<int>(rng.next_below(static_cast<std::uint64_t>(vocab))),
                         static_cast<int>(rng.next_below(static_cast<std::uint64_t>(vocab)))};
        const int len = rng.next_int(1, 3);
        for (int j = 0; j < len; ++j)
            item.answer.push_back(
                static_cast<int>(rng.next_below(static_cast<std::uint64_t>(vocab))));
        b.push_back(item);
    }
    return b;
}

// checks n_checks random parameter coordinates; returns the worst relative error
double fd_check(ModelState& m, const std::function<Tensor()>& thunk, std::uint64_t seed,
                int n_checks = 20) {
    ParamVec analytic = grad(m, thunk);
    std::vector<std::vector<double>*> slots;
    m.params.for_each([&slots](const std::string&, Tensor& t) { slots.push_back(&t.value()); });

    Rng rng(seed);
    double worst = 0.0;
    for (int c = 0; c < n_checks; ++c) {
        const auto si = static_cast<std::size_t>(rng.next_below(slots.size()));
        const auto pi = static_cast<std::size_t>(rng.next_below(slots[si]->size()));
        const double keep = (*slots[si])[pi];
        (*slots[si])[pi] = keep + kH;
        const double up = thunk().item();
        (*slots[si])[pi] = keep - kH;
        const double down = thunk().item();
        (*slots[si])[pi] = keep;
        const double fd = (up - down) / (2.0 * kH);
        const double a = analytic.slots[si][pi];
        const double err = std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-6});
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace

TEST_CASE("every objective passes the central-difference check within 60 s") {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(404);

    ModelState m = check_model(31);
    m.take_reference_snapshot();
    // move away from the reference so KL and NPO gradients are non-trivial
    Batch warm = random_batch(rng, 4, 48);
    ParamVec g = grad(m, [&] { return loss_ga_node(m, warm); });
    sgd_step(m, g, 0.02);

    Batch f = random_batch(rng, 4, 48);
    Batch r = random_batch(rng, 4, 48);
    PairedBatch pb;
    pb.subject_id = 0;
    pb.forget_items = f;
    pb.retain_items = r;
    const std::vector<PairedBatch> paired = {pb};

    SUBCASE("ga") {
        CHECK(fd_check(m, [&] { return loss_ga_node(m, f); }, 1) < kRelTol);
    }
    SUBCASE("ga_diff") {
        CHECK(fd_check(m, [&] { return loss_ga_diff_node(m, f, r, 1.7); }, 2) < kRelTol);
    }
    SUBCASE("kl_min") {
        CHECK(fd_check(m, [&] { return loss_kl_min_node(m, f, r, 0.8); }, 3) < kRelTol);
    }
    SUBCASE("npo") {
        CHECK(fd_check(m, [&] { return loss_npo_node(m, f, 0.4); }, 4) < kRelTol);
    }
    SUBCASE("mmu value route (ga_diff at beta 1)") {
        CHECK(fd_check(m, [&] { return loss_ga_diff_node(m, f, r, 1.0); }, 5) < kRelTol);
    }
    SUBCASE("boundary") {
        CHECK(fd_check(m, [&] { return boundary_loss_node(m, paired, 1.5); }, 6) < kRelTol);
    }
    SUBCASE("bao") {
        UnlearnConfig cfg;
        cfg.method = Method::bao_ga_diff;
        cfg.beta_gd = 2.0;
        cfg.lambda_b = 1.0;
        CHECK(fd_check(m, [&] { return loss_bao_node(m, f, r, paired, cfg); }, 7) < kRelTol);
    }

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 60.0);
}

TEST_CASE("per-op spot check with a dense coordinate sweep on one tensor") {
    ModelState m = check_model(77);
    Rng rng(5);
    Batch f = random_batch(rng, 2, 48);
    // exhaustive over the out_gain vector: gradient flows through rmsnorm
    ParamVec analytic = grad(m, [&] { return loss_ga_node(m, f); });
    auto& gain = m.params.out_gain.value();
    // locate the out_gain slot index in for_each order
    std::size_t slot = 0, idx = 0;
    m.params.for_each([&](const std::string& name, Tensor&) {
        if (name == "out_gain") slot = idx;
        ++idx;
    });
    for (std::size_t j = 0; j < gain.size(); j += 4) {
        const double keep = gain[j];
        gain[j] = keep + kH;
        const double up = loss_ga(m, f);
        gain[j] = keep - kH;
        const double down = loss_ga(m, f);
        gain[j] = keep;
        const double fd = (up - down) / (2.0 * kH);
        CHECK(std::abs(fd - analytic.slots[slot][j]) <=
              kRelTol * std::max({std::abs(fd), std::abs(analytic.slots[slot][j]), 1e-6}));
    }
}
