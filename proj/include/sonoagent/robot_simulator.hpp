#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sonoagent/toolcall_parser.hpp"

namespace sonoagent {

// Procedure phases, in handbook order.
enum class Phase {
    Uninitialized,
    CameraReady,
    ModelDisplayed,
    RobotActive,
    Scanned,
    Segmented,
    ReportGenerated,
    ReportPrinted,
};

std::string_view to_string(Phase phase);
std::optional<Phase> phase_from_string(std::string_view name);

enum class ScanTarget { Carotid, Spine, Rib };

std::string_view to_string(ScanTarget target);
std::optional<ScanTarget> scan_target_from_string(std::string_view name);

// ---------------------------------------------------------------------------
// Synthetic scans and segmentation

template <typename Scalar>
using ImageGrid = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IntensityGrid = ImageGrid<double>;
using PixelMask = ImageGrid<bool>;

struct PixelCoord {
    int row = 0;
    int col = 0;

    friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// Piecewise-constant synthetic ultrasound frame. `target_mask` marks the
/// anatomical region and is a single 4-connected component.
struct ScanImage {
    IntensityGrid intensities;  // row-major, values in [0,1]
    PixelMask target_mask;

    int width() const { return static_cast<int>(intensities.cols()); }
    int height() const { return static_cast<int>(intensities.rows()); }
};

inline constexpr int kScanSize = 64;
inline constexpr double kBackgroundIntensity = 0.2;
inline constexpr double kTargetIntensity = 0.8;

/// 64x64 frame: background 0.2, one region at 0.8 whose shape depends on
/// the target (ellipse, elongated band, arc) and whose placement and size
/// are jittered by `seed`.
ScanImage make_scan_image(std::uint64_t seed, ScanTarget target);

/// Plain PGM (P2), maxval 255.
std::string to_pgm(const ScanImage& image);

bool is_single_four_connected_component(const PixelMask& mask);

/// Normalized position -> pixel: col = round_half_down(x * (W-1)),
/// row = round_half_down(y * (H-1)).
PixelCoord seed_pixel(const ScanImage& image, std::array<double, 2> position);

/// Normalized coordinates of a pixel (inverse of seed_pixel).
std::array<double, 2> normalized_position(const ScanImage& image, PixelCoord pixel);

struct SegmentationResult {
    PixelMask region;
    PixelCoord seed;
    std::size_t region_size = 0;
    double area_fraction = 0.0;  // region_size / (W*H)
    bool hit = false;            // region covers at least half of target_mask
};

/// 4-connected flood fill from the seed over pixels whose intensity is
/// within `threshold` of the seed intensity. Throws
/// Error(PositionOutOfRange) outside [0,1]^2 and Error(ThresholdOutOfRange)
/// outside [0,1].
SegmentationResult segment(const ScanImage& image, std::array<double, 2> position, double threshold);

// ---------------------------------------------------------------------------
// Faults

enum class FaultKind { PatientMotion, ProbeSlip, ApiFailure };

std::string_view to_string(FaultKind kind);
std::optional<FaultKind> fault_kind_from_string(std::string_view name);

/// Exactly one of the two trigger forms is set.
struct FaultTrigger {
    std::optional<int> after_invocations;
    std::optional<std::string> on_api;
};

struct FaultSpec {
    FaultKind kind = FaultKind::PatientMotion;
    FaultTrigger trigger;

    static FaultSpec after(FaultKind kind, int invocations) { return {kind, {invocations, std::nullopt}}; }
    static FaultSpec on(FaultKind kind, std::string api) { return {kind, {std::nullopt, std::move(api)}}; }
};

/// {"kind":"patient_motion","trigger":{"after_invocations":4}} or
/// {"kind":"api_failure","trigger":{"on_api":"Generate_Report"}}. A missing
/// trigger means "after 0 invocations". Throws Error(InvalidInput).
FaultSpec fault_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FaultSpec& fault);

struct FiredFault {
    FaultSpec fault;
    int at_invocation = 0;  // invocation count when it fired
    bool had_effect = false;
};

// ---------------------------------------------------------------------------
// State machine

struct Observation {
    bool ok = false;
    std::string api_name;
    std::string message;
    Phase state_after = Phase::Uninitialized;
    std::optional<std::string> error;  // error code name when !ok
    std::optional<Phase> missing_phase;
    nlohmann::json data;  // null when there is no payload
};

nlohmann::json to_json(const Observation& obs);

struct RobotState {
    Phase phase = Phase::Uninitialized;
    std::optional<ScanTarget> scan_target;
    std::optional<ScanImage> scan;
    std::optional<SegmentationResult> segmentation;
    std::set<FaultKind> fault_flags;  // motion faults whose effect is still active
    std::uint64_t rng_seed = 0;
    int invocations = 0;
    int scans_taken = 0;
    std::deque<FaultSpec> pending_faults;
    std::vector<FiredFault> fault_log;
};

RobotState initial_robot_state(std::uint64_t seed);

/// Export for the console; omits image pixels.
nlohmann::json to_json(const RobotState& state);

/// API that moves the machine out of `from`, per the handbook order
/// (nullopt for ReportPrinted).
std::optional<std::string> api_advancing_from(Phase from);
/// Phase an API requires / produces; nullopt for names outside the robot.
std::optional<Phase> required_phase(std::string_view api_name);
std::optional<Phase> produced_phase(std::string_view api_name);

/// Pure transition. Out-of-order and failing calls return ok=false and leave
/// the procedure state untouched (only the invocation counter and fault
/// queue move). Pending faults are consulted as documented on FaultSpec.
std::pair<RobotState, Observation> invoke(const RobotState& state, const ValidatedCall& call);

/// Queues a fault. A motion fault whose after-count trigger is already due
/// fires immediately.
RobotState inject_fault(RobotState state, FaultSpec fault);

/// Owning wrapper used by one session.
class RobotSimulator {
public:
    explicit RobotSimulator(std::uint64_t seed = 0) : state_(initial_robot_state(seed)) {}
    explicit RobotSimulator(RobotState state) : state_(std::move(state)) {}

    Observation invoke(const ValidatedCall& call);
    void inject_fault(FaultSpec fault);

    const RobotState& state() const { return state_; }

private:
    RobotState state_;
};

}  // namespace sonoagent
