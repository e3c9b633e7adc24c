#include "sonoagent/robot_simulator.hpp"

#include <array>
#include <cstdio>

#include "sonoagent/errors.hpp"

namespace sonoagent {

namespace {

struct Transition {
    std::string_view api;
    Phase from;
    Phase to;
};

// The handbook order: each API advances exactly one phase.
constexpr std::array<Transition, 7> kTransitions{{
    {"Init_Depth_Camera", Phase::Uninitialized, Phase::CameraReady},
    {"Display_Artery_Model", Phase::CameraReady, Phase::ModelDisplayed},
    {"Activate_Robot", Phase::ModelDisplayed, Phase::RobotActive},
    {"Start_Scan", Phase::RobotActive, Phase::Scanned},
    {"Image_Seg", Phase::Scanned, Phase::Segmented},
    {"Generate_Report", Phase::Segmented, Phase::ReportGenerated},
    {"Print_Report", Phase::ReportGenerated, Phase::ReportPrinted},
}};

const Transition* find_transition(std::string_view api) {
    for (const auto& t : kTransitions) {
        if (t.api == api) return &t;
    }
    return nullptr;
}

std::string fmt(const char* format, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, value);
    return buf;
}

std::uint64_t scan_seed(std::uint64_t rng_seed, int scans_taken) {
    return rng_seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(scans_taken);
}

bool is_motion(FaultKind kind) { return kind != FaultKind::ApiFailure; }

// Applies the motion-fault effect. Returns whether anything was invalidated.
bool apply_motion(RobotState& state, FaultKind kind) {
    if (state.phase < Phase::Scanned) return false;
    state.phase = Phase::RobotActive;
    state.scan.reset();
    state.segmentation.reset();
    state.fault_flags.insert(kind);
    return true;
}

std::string motion_note(FaultKind kind, bool had_effect) {
    const std::string what = kind == FaultKind::PatientMotion ? "Patient motion" : "Probe slip";
    if (!had_effect) return " " + what + " detected; nothing to invalidate.";
    return " " + what + " detected: scan invalidated, phase regressed to RobotActive.";
}

Observation failure(const RobotState& state, std::string_view api, ErrorCode code, std::string message,
                    std::optional<Phase> missing = std::nullopt) {
    Observation obs;
    obs.ok = false;
    obs.api_name = std::string(api);
    obs.message = std::move(message);
    obs.state_after = state.phase;
    obs.error = std::string(to_string(code));
    obs.missing_phase = missing;
    return obs;
}

Observation failure(const RobotState& state, std::string_view api, std::string_view code, std::string message,
                    std::optional<Phase> missing = std::nullopt) {
    Observation obs;
    obs.ok = false;
    obs.api_name = std::string(api);
    obs.message = std::move(message);
    obs.state_after = state.phase;
    obs.error = std::string(code);
    obs.missing_phase = missing;
    return obs;
}

// Runs the transition itself; `next` starts as a copy of the old state.
Observation apply_call(RobotState& next, const ValidatedCall& call) {
    const auto& api = call.spec.name;
    const Transition* t = find_transition(api);
    if (!t) {
        return failure(next, api, ErrorCode::UnknownApi, "UnknownApi: " + api + " is not supported by the robot.");
    }
    if (next.phase != t->from) {
        if (api == "Image_Seg" && next.phase < Phase::Scanned && !next.fault_flags.empty()) {
            const auto cause = *next.fault_flags.begin();
            return failure(next, api, "StaleScan",
                           "StaleScan(Scanned): the scan was invalidated by " + std::string(to_string(cause)) +
                               "; Image_Seg requires a fresh scan (current phase " +
                               std::string(to_string(next.phase)) + ").",
                           Phase::Scanned);
        }
        return failure(next, api, "PreconditionError",
                       "PreconditionError(" + std::string(to_string(t->from)) + "): " + api + " requires phase " +
                           std::string(to_string(t->from)) + "; current phase " + std::string(to_string(next.phase)) +
                           ".",
                       t->from);
    }

    Observation obs;
    obs.ok = true;
    obs.api_name = api;
    if (api == "Init_Depth_Camera") {
        obs.message = "Depth camera initialized.";
    } else if (api == "Display_Artery_Model") {
        obs.message = "Artery model displayed.";
    } else if (api == "Activate_Robot") {
        obs.message = "Robotic arm activated.";
    } else if (api == "Start_Scan") {
        const auto target = *scan_target_from_string(call.text("target"));
        auto image = make_scan_image(scan_seed(next.rng_seed, next.scans_taken), target);
        ++next.scans_taken;

        // Landmark: the target pixel closest to the region centroid.
        double sr = 0, sc = 0;
        const auto n = image.target_mask.count();
        for (int r = 0; r < image.height(); ++r)
            for (int c = 0; c < image.width(); ++c)
                if (image.target_mask(r, c)) sr += r, sc += c;
        sr /= static_cast<double>(n);
        sc /= static_cast<double>(n);
        PixelCoord landmark;
        double best = 1e300;
        for (int r = 0; r < image.height(); ++r) {
            for (int c = 0; c < image.width(); ++c) {
                const double d = (r - sr) * (r - sr) + (c - sc) * (c - sc);
                if (image.target_mask(r, c) && d < best) best = d, landmark = {r, c};
            }
        }
        const auto pos = normalized_position(image, landmark);
        std::string label(to_string(target));
        label[0] = static_cast<char>(label[0] - 'a' + 'A');
        obs.message = label + " scan acquired (64x64); bright region near (" + fmt("%.4f", pos[0]) + ", " +
                      fmt("%.4f", pos[1]) + ").";
        obs.data = {{"target", std::string(to_string(target))},
                    {"width", image.width()},
                    {"height", image.height()},
                    {"landmark", {pos[0], pos[1]}}};
        next.scan_target = target;
        next.scan = std::move(image);
        next.segmentation.reset();
        next.fault_flags.clear();
    } else if (api == "Image_Seg") {
        SegmentationResult seg;
        try {
            seg = segment(*next.scan, call.real_pair("position"), call.real("threshold"));
        } catch (const Error& e) {
            return failure(next, api, e.code(), std::string(e.what()) + ".");
        }
        obs.message = "Segmented " + std::to_string(seg.region_size) + " pixels (area fraction " +
                      fmt("%.4f", seg.area_fraction) + "); " + (seg.hit ? "target hit." : "target missed.");
        obs.data = {{"region_size", seg.region_size},
                    {"area_fraction", seg.area_fraction},
                    {"hit", seg.hit},
                    {"seed", {seg.seed.row, seg.seed.col}}};
        next.segmentation = std::move(seg);
    } else if (api == "Generate_Report") {
        obs.message = "Report generated.";
    } else if (api == "Print_Report") {
        auto it = call.arguments.find("copies");
        const auto copies = it == call.arguments.end() ? 1 : std::get<std::int64_t>(it->second);
        obs.message = "Report printed (" + std::to_string(copies) + (copies == 1 ? " copy)." : " copies).");
    }
    next.phase = t->to;
    return obs;
}

}  // namespace

std::string_view to_string(Phase phase) {
    switch (phase) {
        case Phase::Uninitialized: return "Uninitialized";
        case Phase::CameraReady: return "CameraReady";
        case Phase::ModelDisplayed: return "ModelDisplayed";
        case Phase::RobotActive: return "RobotActive";
        case Phase::Scanned: return "Scanned";
        case Phase::Segmented: return "Segmented";
        case Phase::ReportGenerated: return "ReportGenerated";
        case Phase::ReportPrinted: return "ReportPrinted";
    }
    return "Unknown";
}

std::optional<Phase> phase_from_string(std::string_view name) {
    for (int i = 0; i <= static_cast<int>(Phase::ReportPrinted); ++i) {
        if (to_string(static_cast<Phase>(i)) == name) return static_cast<Phase>(i);
    }
    return std::nullopt;
}

std::string_view to_string(FaultKind kind) {
    switch (kind) {
        case FaultKind::PatientMotion: return "patient_motion";
        case FaultKind::ProbeSlip: return "probe_slip";
        case FaultKind::ApiFailure: return "api_failure";
    }
    return "unknown";
}

std::optional<FaultKind> fault_kind_from_string(std::string_view name) {
    for (auto k : {FaultKind::PatientMotion, FaultKind::ProbeSlip, FaultKind::ApiFailure}) {
        if (to_string(k) == name) return k;
    }
    return std::nullopt;
}

FaultSpec fault_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
        throw Error(ErrorCode::InvalidInput, "fault needs a string 'kind'");
    }
    const auto kind = fault_kind_from_string(j["kind"].get<std::string>());
    if (!kind) throw Error(ErrorCode::InvalidInput, "unknown fault kind '" + j["kind"].get<std::string>() + "'");
    FaultSpec fault{*kind, {}};
    if (!j.contains("trigger")) {
        fault.trigger.after_invocations = 0;
        return fault;
    }
    const auto& t = j["trigger"];
    const bool has_after = t.is_object() && t.contains("after_invocations");
    const bool has_api = t.is_object() && t.contains("on_api");
    if (has_after == has_api) {
        throw Error(ErrorCode::InvalidInput, "trigger needs exactly one of 'after_invocations' or 'on_api'");
    }
    if (has_after) {
        if (!t["after_invocations"].is_number_integer() || t["after_invocations"].get<int>() < 0) {
            throw Error(ErrorCode::InvalidInput, "'after_invocations' must be a non-negative integer");
        }
        fault.trigger.after_invocations = t["after_invocations"].get<int>();
    } else {
        if (!t["on_api"].is_string() || t["on_api"].get<std::string>().empty()) {
            throw Error(ErrorCode::InvalidInput, "'on_api' must be a non-empty string");
        }
        fault.trigger.on_api = t["on_api"].get<std::string>();
    }
    return fault;
}

nlohmann::json to_json(const FaultSpec& fault) {
    nlohmann::json trigger = nlohmann::json::object();
    if (fault.trigger.after_invocations) trigger["after_invocations"] = *fault.trigger.after_invocations;
    if (fault.trigger.on_api) trigger["on_api"] = *fault.trigger.on_api;
    return {{"kind", std::string(to_string(fault.kind))}, {"trigger", trigger}};
}

nlohmann::json to_json(const Observation& obs) {
    nlohmann::json j = {{"ok", obs.ok},
                        {"api_name", obs.api_name},
                        {"message", obs.message},
                        {"state_after", std::string(to_string(obs.state_after))}};
    if (obs.error) j["error"] = *obs.error;
    if (obs.missing_phase) j["missing_phase"] = std::string(to_string(*obs.missing_phase));
    if (!obs.data.is_null()) j["data"] = obs.data;
    return j;
}

RobotState initial_robot_state(std::uint64_t seed) {
    RobotState state;
    state.rng_seed = seed;
    return state;
}

nlohmann::json to_json(const RobotState& state) {
    nlohmann::json j = {{"phase", std::string(to_string(state.phase))},
                        {"has_scan", state.scan.has_value()},
                        {"invocations", state.invocations},
                        {"scans_taken", state.scans_taken},
                        {"rng_seed", state.rng_seed}};
    j["scan_target"] = state.scan_target ? nlohmann::json(std::string(to_string(*state.scan_target))) : nlohmann::json();
    if (state.segmentation) {
        j["segmentation"] = {{"region_size", state.segmentation->region_size},
                             {"area_fraction", state.segmentation->area_fraction},
                             {"hit", state.segmentation->hit}};
    }
    j["fault_flags"] = nlohmann::json::array();
    for (auto f : state.fault_flags) j["fault_flags"].push_back(std::string(to_string(f)));
    j["pending_faults"] = nlohmann::json::array();
    for (const auto& f : state.pending_faults) j["pending_faults"].push_back(to_json(f));
    j["fault_log"] = nlohmann::json::array();
    for (const auto& f : state.fault_log) {
        j["fault_log"].push_back({{"fault", to_json(f.fault)}, {"at_invocation", f.at_invocation}, {"had_effect", f.had_effect}});
    }
    return j;
}

std::optional<std::string> api_advancing_from(Phase from) {
    for (const auto& t : kTransitions) {
        if (t.from == from) return std::string(t.api);
    }
    return std::nullopt;
}

std::optional<Phase> required_phase(std::string_view api_name) {
    const auto* t = find_transition(api_name);
    return t ? std::optional<Phase>(t->from) : std::nullopt;
}

std::optional<Phase> produced_phase(std::string_view api_name) {
    const auto* t = find_transition(api_name);
    return t ? std::optional<Phase>(t->to) : std::nullopt;
}

std::pair<RobotState, Observation> invoke(const RobotState& state, const ValidatedCall& call) {
    RobotState next = state;
    const auto& api = call.spec.name;

    // Injected API failures are consumed before the call runs.
    Observation obs;
    bool injected = false;
    for (auto it = next.pending_faults.begin(); it != next.pending_faults.end(); ++it) {
        if (it->kind != FaultKind::ApiFailure) continue;
        const bool due = (it->trigger.on_api && *it->trigger.on_api == api) ||
                         (it->trigger.after_invocations && state.invocations >= *it->trigger.after_invocations);
        if (!due) continue;
        next.fault_log.push_back({*it, state.invocations, true});
        next.pending_faults.erase(it);
        obs = failure(next, api, "InjectedFailure", "InjectedFailure: " + api + " failed (injected api_failure).");
        injected = true;
        break;
    }
    if (!injected) obs = apply_call(next, call);
    ++next.invocations;

    // Motion faults fire after the call, in queue order.
    for (auto it = next.pending_faults.begin(); it != next.pending_faults.end();) {
        const bool due = is_motion(it->kind) &&
                         ((it->trigger.after_invocations && next.invocations >= *it->trigger.after_invocations) ||
                          (it->trigger.on_api && *it->trigger.on_api == api && obs.ok));
        if (!due) {
            ++it;
            continue;
        }
        const bool effect = apply_motion(next, it->kind);
        next.fault_log.push_back({*it, next.invocations, effect});
        obs.message += motion_note(it->kind, effect);
        it = next.pending_faults.erase(it);
    }
    obs.state_after = next.phase;
    return {std::move(next), std::move(obs)};
}

RobotState inject_fault(RobotState state, FaultSpec fault) {
    const bool due_now = is_motion(fault.kind) && fault.trigger.after_invocations &&
                         state.invocations >= *fault.trigger.after_invocations;
    if (due_now) {
        const bool effect = apply_motion(state, fault.kind);
        state.fault_log.push_back({std::move(fault), state.invocations, effect});
    } else {
        state.pending_faults.push_back(std::move(fault));
    }
    return state;
}

Observation RobotSimulator::invoke(const ValidatedCall& call) {
    auto [next, obs] = sonoagent::invoke(state_, call);
    state_ = std::move(next);
    return obs;
}

void RobotSimulator::inject_fault(FaultSpec fault) { state_ = sonoagent::inject_fault(std::move(state_), std::move(fault)); }

}  // namespace sonoagent
