#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "sonoagent/errors.hpp"
#include "sonoagent/robot_simulator.hpp"

using namespace sonoagent;

namespace {

ValidatedCall call(const std::string& api) {
    return validate_call(oracle::canonical_request(api), default_registry());
}

ValidatedCall seg_call(std::array<double, 2> pos, double threshold) {
    ToolCallRequest r{"Image_Seg", {{"position", pos}, {"threshold", threshold}}};
    return validate_call(r, default_registry());
}

// Image_Seg aimed at the scan's own landmark, as a well-informed caller would.
std::pair<RobotState, Observation> invoke_informed(const RobotState& s, const std::string& api) {
    if (api == "Image_Seg" && s.scan) {
        const auto& m = s.scan->target_mask;
        for (int r = 0; r < m.rows(); ++r)
            for (int c = 0; c < m.cols(); ++c)
                if (m(r, c)) return invoke(s, seg_call(normalized_position(*s.scan, {r, c}), 0.2));
    }
    return invoke(s, call(api));
}

RobotState walk(RobotState s, int n) {
    for (int i = 0; i < n; ++i) s = invoke_informed(s, oracle::golden_sequence()[i]).first;
    return s;
}

ScanImage noisy_image(std::mt19937_64& rng, int h, int w) {
    std::uniform_int_distribution<int> level(0, 15);
    ScanImage img;
    img.intensities.resize(h, w);
    img.target_mask.resize(h, w);
    img.target_mask.setConstant(false);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) img.intensities(r, c) = level(rng) / 15.0;
    img.target_mask(h / 2, w / 2) = true;
    return img;
}

}  // namespace

TEST(Transitions, MatchExplicitTable) {
    const auto& table = oracle::transition_table();
    for (int from = 0; from <= static_cast<int>(Phase::ReportPrinted); ++from) {
        for (const auto& [api, edge] : table) {
            RobotState s = walk(initial_robot_state(1), from);
            ASSERT_EQ(static_cast<int>(s.phase), from);
            const auto [next, obs] = invoke_informed(s, api);
            if (edge.first == s.phase) {
                EXPECT_TRUE(obs.ok) << api << " from " << to_string(s.phase) << ": " << obs.message;
                EXPECT_EQ(next.phase, edge.second);
            } else {
                EXPECT_FALSE(obs.ok) << api << " from " << to_string(s.phase);
                EXPECT_EQ(next.phase, s.phase);
                ASSERT_TRUE(obs.missing_phase.has_value());
                EXPECT_EQ(*obs.missing_phase, edge.first);
                EXPECT_EQ(obs.error, "PreconditionError");
            }
            EXPECT_EQ(next.invocations, s.invocations + 1);
            EXPECT_EQ(obs.state_after, next.phase);
        }
    }
    for (const auto& [api, edge] : table) {
        EXPECT_EQ(required_phase(api), edge.first);
        EXPECT_EQ(produced_phase(api), edge.second);
        EXPECT_EQ(api_advancing_from(edge.first), api);
    }
    EXPECT_FALSE(api_advancing_from(Phase::ReportPrinted).has_value());
}

TEST(Transitions, PreconditionMessage) {
    RobotSimulator robot(3);
    const auto obs = robot.invoke(call("Start_Scan"));
    EXPECT_FALSE(obs.ok);
    EXPECT_EQ(obs.message, "PreconditionError(RobotActive): Start_Scan requires phase RobotActive; current phase "
                           "Uninitialized.");
}

TEST(Transitions, GoldenRunObservations) {
    RobotSimulator robot(42);
    for (const auto& api : oracle::golden_sequence()) {
        Observation obs;
        if (api == "Image_Seg") {
            obs = robot.invoke(seg_call({0.5, 0.5}, 0.2));
        } else {
            obs = robot.invoke(call(api));
        }
        EXPECT_TRUE(obs.ok) << api << ": " << obs.message;
        if (api == "Start_Scan") {
            EXPECT_EQ(obs.data["width"], 64);
            EXPECT_EQ(obs.data["target"], "carotid");
            ASSERT_TRUE(obs.data.contains("landmark"));
            const std::array<double, 2> lm{obs.data["landmark"][0], obs.data["landmark"][1]};
            const auto px = seed_pixel(*robot.state().scan, lm);
            EXPECT_TRUE(robot.state().scan->target_mask(px.row, px.col));
        }
    }
    EXPECT_EQ(robot.state().phase, Phase::ReportPrinted);
    EXPECT_EQ(robot.state().invocations, 7);
}

TEST(Transitions, SegmentationArgumentErrorsDoNotAdvance) {
    RobotState s = walk(initial_robot_state(5), 4);
    auto [next, obs] = invoke(s, seg_call({1.5, 0.5}, 0.2));
    EXPECT_FALSE(obs.ok);
    EXPECT_EQ(obs.error, "PositionOutOfRange");
    EXPECT_EQ(next.phase, Phase::Scanned);
    std::tie(next, obs) = invoke(s, seg_call({0.5, 0.5}, 1.5));
    EXPECT_EQ(obs.error, "ThresholdOutOfRange");
}

TEST(Transitions, SegmentationMissIsStillOk) {
    RobotState s = walk(initial_robot_state(5), 4);
    // Corner pixel is background for every generated shape.
    const auto [next, obs] = invoke(s, seg_call({0.0, 0.0}, 0.1));
    EXPECT_TRUE(obs.ok);
    EXPECT_EQ(obs.data["hit"], false);
    EXPECT_EQ(next.phase, Phase::Segmented);
}

TEST(ScanImages, ShapeInvariants) {
    for (auto target : {ScanTarget::Carotid, ScanTarget::Spine, ScanTarget::Rib}) {
        for (std::uint64_t seed = 0; seed < 40; ++seed) {
            const auto img = make_scan_image(seed, target);
            ASSERT_EQ(img.width(), kScanSize);
            ASSERT_EQ(img.height(), kScanSize);
            EXPECT_TRUE(is_single_four_connected_component(img.target_mask));
            EXPECT_GT(img.target_mask.count(), 20);
            for (int r = 0; r < img.height(); ++r) {
                for (int c = 0; c < img.width(); ++c) {
                    EXPECT_EQ(img.intensities(r, c), img.target_mask(r, c) ? kTargetIntensity : kBackgroundIntensity);
                }
            }
            EXPECT_FALSE(img.target_mask(0, 0));
        }
    }
}

TEST(ScanImages, DeterministicPerSeed) {
    const auto a = make_scan_image(9, ScanTarget::Rib);
    const auto b = make_scan_image(9, ScanTarget::Rib);
    const auto c = make_scan_image(10, ScanTarget::Rib);
    EXPECT_TRUE((a.intensities == b.intensities).all());
    EXPECT_FALSE((a.target_mask == c.target_mask).all());
}

TEST(ScanImages, ComponentCheck) {
    PixelMask m = PixelMask::Constant(4, 4, false);
    EXPECT_FALSE(is_single_four_connected_component(m));
    m(0, 0) = m(1, 1) = true;  // diagonal only
    EXPECT_FALSE(is_single_four_connected_component(m));
    m(0, 1) = true;
    EXPECT_TRUE(is_single_four_connected_component(m));
}

TEST(ScanImages, Pgm) {
    const auto img = make_scan_image(1, ScanTarget::Carotid);
    const auto pgm = to_pgm(img);
    EXPECT_EQ(pgm.rfind("P2\n64 64\n255\n", 0), 0u);
}

TEST(SeedPixel, MatchesRoundingOracle) {
    const auto img = make_scan_image(0, ScanTarget::Carotid);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 2000; ++i) {
        const std::array<double, 2> p{u(rng), u(rng)};
        const auto px = seed_pixel(img, p);
        EXPECT_EQ(px.col, oracle::pixel_index(p[0], 64));
        EXPECT_EQ(px.row, oracle::pixel_index(p[1], 64));
    }
    // Exact halves round down: 0.5 * 63 = 31.5 -> 31.
    EXPECT_EQ(seed_pixel(img, {0.5, 0.5}), (PixelCoord{31, 31}));
    EXPECT_EQ(seed_pixel(img, {1.0, 0.0}), (PixelCoord{0, 63}));
    for (int r = 0; r < 64; r += 7)
        for (int c = 0; c < 64; c += 5) EXPECT_EQ(seed_pixel(img, normalized_position(img, {r, c})), (PixelCoord{r, c}));
}

TEST(Segmentation, MatchesRelaxationOracle) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> coin(0, 1);
    for (int trial = 0; trial < 120; ++trial) {
        ScanImage img = coin(rng) ? noisy_image(rng, 24, 24)
                                  : make_scan_image(rng(), static_cast<ScanTarget>(trial % 3));
        const std::array<double, 2> pos{u(rng), u(rng)};
        const double threshold = std::floor(u(rng) * 16) / 16.0;
        const auto seg = segment(img, pos, threshold);

        std::vector<std::vector<double>> grid(img.height(), std::vector<double>(img.width()));
        for (int r = 0; r < img.height(); ++r)
            for (int c = 0; c < img.width(); ++c) grid[r][c] = img.intensities(r, c);
        const int sr = oracle::pixel_index(pos[1], img.height());
        const int sc = oracle::pixel_index(pos[0], img.width());
        const auto want = oracle::relaxation_fill(grid, sr, sc, threshold);

        std::size_t size = 0, overlap = 0;
        for (int r = 0; r < img.height(); ++r) {
            for (int c = 0; c < img.width(); ++c) {
                ASSERT_EQ(seg.region(r, c), want[r][c]) << "trial " << trial << " at " << r << "," << c;
                size += want[r][c];
                overlap += want[r][c] && img.target_mask(r, c);
            }
        }
        EXPECT_EQ(seg.region_size, size);
        EXPECT_EQ(seg.seed, (PixelCoord{sr, sc}));
        EXPECT_DOUBLE_EQ(seg.area_fraction, static_cast<double>(size) / (img.width() * img.height()));
        EXPECT_EQ(seg.hit, 2 * overlap >= static_cast<std::size_t>(img.target_mask.count()));
    }
}

TEST(Segmentation, ThresholdZeroAndOne) {
    const auto img = make_scan_image(3, ScanTarget::Carotid);
    const auto whole = segment(img, {0.0, 0.0}, 1.0);
    EXPECT_EQ(whole.region_size, 64u * 64u);
    const auto bg = segment(img, {0.0, 0.0}, 0.0);
    EXPECT_EQ(bg.region_size, static_cast<std::size_t>(64 * 64 - img.target_mask.count()));
    EXPECT_THROW(segment(img, {-0.1, 0.0}, 0.2), Error);
    EXPECT_THROW(segment(img, {0.0, 0.0}, -0.01), Error);
}

TEST(Faults, PatientMotionAfterScanRegresses) {
    RobotState s = initial_robot_state(4);
    s.pending_faults.push_back(FaultSpec::after(FaultKind::PatientMotion, 4));
    s = walk(s, 4);
    EXPECT_EQ(s.phase, Phase::RobotActive);
    EXPECT_FALSE(s.scan.has_value());
    EXPECT_TRUE(s.fault_flags.contains(FaultKind::PatientMotion));
    ASSERT_EQ(s.fault_log.size(), 1u);
    EXPECT_TRUE(s.fault_log[0].had_effect);

    auto [stale, obs] = invoke(s, seg_call({0.5, 0.5}, 0.2));
    EXPECT_FALSE(obs.ok);
    EXPECT_EQ(obs.error, "StaleScan");
    EXPECT_EQ(obs.missing_phase, Phase::Scanned);
    EXPECT_EQ(obs.message.rfind("StaleScan(Scanned)", 0), 0u);

    auto [rescanned, obs2] = invoke(stale, call("Start_Scan"));
    EXPECT_TRUE(obs2.ok);
    EXPECT_TRUE(rescanned.fault_flags.empty());
    // The second scan uses a different derived seed.
    EXPECT_EQ(rescanned.scans_taken, 2);
}

TEST(Faults, MotionBeforeScanHasNoEffect) {
    RobotState s = initial_robot_state(4);
    s.pending_faults.push_back(FaultSpec::after(FaultKind::ProbeSlip, 1));
    auto [next, obs] = invoke(s, call("Init_Depth_Camera"));
    EXPECT_TRUE(obs.ok);
    EXPECT_EQ(next.phase, Phase::CameraReady);
    ASSERT_EQ(next.fault_log.size(), 1u);
    EXPECT_FALSE(next.fault_log[0].had_effect);
    EXPECT_TRUE(next.pending_faults.empty());
}

TEST(Faults, OnApiTrigger) {
    RobotState s = walk(initial_robot_state(4), 4);
    s.pending_faults.push_back(FaultSpec::on(FaultKind::PatientMotion, "Image_Seg"));
    auto [next, obs] = invoke_informed(s, "Image_Seg");
    EXPECT_TRUE(obs.ok);
    EXPECT_EQ(next.phase, Phase::RobotActive);
    EXPECT_FALSE(next.segmentation.has_value());
}

TEST(Faults, ApiFailureConsumedOnce) {
    RobotState s = initial_robot_state(4);
    s.pending_faults.push_back(FaultSpec::on(FaultKind::ApiFailure, "Init_Depth_Camera"));
    auto [a, obs] = invoke(s, call("Init_Depth_Camera"));
    EXPECT_FALSE(obs.ok);
    EXPECT_EQ(obs.error, "InjectedFailure");
    EXPECT_EQ(a.phase, Phase::Uninitialized);
    auto [b, obs2] = invoke(a, call("Init_Depth_Camera"));
    EXPECT_TRUE(obs2.ok);
    EXPECT_EQ(b.phase, Phase::CameraReady);
}

TEST(Faults, InjectionFiresImmediatelyWhenDue) {
    RobotSimulator robot(2);
    for (int i = 0; i < 4; ++i) robot.invoke(call(oracle::golden_sequence()[i]));
    ASSERT_EQ(robot.state().phase, Phase::Scanned);
    robot.inject_fault(FaultSpec::after(FaultKind::PatientMotion, 0));
    EXPECT_EQ(robot.state().phase, Phase::RobotActive);
    robot.inject_fault(FaultSpec::after(FaultKind::PatientMotion, 10));
    EXPECT_EQ(robot.state().pending_faults.size(), 1u);
}

TEST(Faults, JsonForms) {
    const auto f = fault_spec_from_json(nlohmann::json::parse(R"({"kind":"patient_motion","trigger":{"after_invocations":4}})"));
    EXPECT_EQ(f.kind, FaultKind::PatientMotion);
    EXPECT_EQ(f.trigger.after_invocations, 4);
    EXPECT_EQ(fault_spec_from_json(to_json(f)).trigger.after_invocations, 4);
    const auto g = fault_spec_from_json(nlohmann::json::parse(R"({"kind":"probe_slip"})"));
    EXPECT_EQ(g.trigger.after_invocations, 0);
    EXPECT_THROW(fault_spec_from_json(nlohmann::json::parse(R"({"kind":"earthquake"})")), Error);
    EXPECT_THROW(fault_spec_from_json(nlohmann::json::parse(R"({"kind":"probe_slip","trigger":{"after_invocations":1,"on_api":"X"}})")),
                 Error);
}

TEST(ModelCheck, GoalOnlyViaHandbookOrder) {
    const auto report = oracle::model_check(initial_robot_state(0), 8, invoke_informed);
    EXPECT_GT(report.sequences_reaching_goal, 0u);
    EXPECT_TRUE(report.only_golden_reaches_goal);
    for (const auto& s : report.offending) ADD_FAILURE() << s;
}

TEST(ModelCheck, EveryFaultStateRecovers) {
    // For each reachable phase and fault kind, some call sequence of length
    // <= 8 reaches ReportPrinted afterwards.
    for (int depth = 0; depth <= 7; ++depth) {
        for (auto kind : {FaultKind::PatientMotion, FaultKind::ProbeSlip, FaultKind::ApiFailure}) {
            RobotState s = walk(initial_robot_state(6), depth);
            s = inject_fault(s, FaultSpec::after(kind, 0));
            std::vector<RobotState> frontier{s};
            bool recovered = s.phase == Phase::ReportPrinted;
            for (int len = 0; len < 8 && !recovered; ++len) {
                std::vector<RobotState> next;
                std::set<std::pair<Phase, std::size_t>> seen;
                for (const auto& st : frontier) {
                    for (const auto& api : oracle::golden_sequence()) {
                        auto [n, obs] = invoke_informed(st, api);
                        if (n.phase == Phase::ReportPrinted) recovered = true;
                        if (seen.insert({n.phase, n.pending_faults.size()}).second) next.push_back(std::move(n));
                    }
                }
                frontier = std::move(next);
            }
            EXPECT_TRUE(recovered) << "depth " << depth << " fault " << to_string(kind);
        }
    }
}
