// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library code it checks.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sonoagent/robot_simulator.hpp"
#include "sonoagent/toolcall_parser.hpp"

namespace oracle {

inline std::filesystem::path source_dir() { return SONOAGENT_SOURCE_DIR; }

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// cos = sum(a_i b_i) / sqrt(sum a_i^2) / sqrt(sum b_i^2), accumulated in
// long double with plain loops.
inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    long double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<long double>(a[i]) * b[i];
        na += static_cast<long double>(a[i]) * a[i];
        nb += static_cast<long double>(b[i]) * b[i];
    }
    return static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

// Full sort of every row by (score desc, key asc); returns row indices.
inline std::vector<std::size_t> argsort_by_cosine(const std::vector<std::vector<double>>& rows,
                                                  const std::vector<std::string>& keys,
                                                  const std::vector<double>& query) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < rows.size(); ++i) scored.emplace_back(cosine(rows[i], query), i);
    std::sort(scored.begin(), scored.end(), [&](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return keys[x.second] < keys[y.second];
    });
    std::vector<std::size_t> order;
    for (const auto& s : scored) order.push_back(s.second);
    return order;
}

// Feature hashing written out longhand: FNV-1a 64 with the published
// offset basis and prime, ASCII alphanumeric tokens, lowercase.
inline std::vector<double> hash_embed(const std::string& text, int d) {
    std::vector<double> v(d, 0.0);
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        std::uint64_t h = 14695981039346656037ull;
        for (unsigned char c : token) {
            h ^= c;
            h *= 1099511628211ull;
        }
        v[h % static_cast<std::uint64_t>(d)] += 1.0;
        token.clear();
    };
    for (unsigned char c : text) {
        const bool alnum = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
        if (alnum) {
            token.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
        } else {
            flush();
        }
    }
    flush();
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
}

// Seeded region grow by repeated sweeps: a pixel joins when it is within
// the threshold of the seed value and touches the region (4-neighbourhood).
// Sweeps until a fixed point; no queue, no recursion.
inline std::vector<std::vector<bool>> relaxation_fill(const std::vector<std::vector<double>>& img, int seed_row,
                                                      int seed_col, double threshold) {
    const int h = static_cast<int>(img.size());
    const int w = static_cast<int>(img[0].size());
    const double s = img[seed_row][seed_col];
    std::vector<std::vector<bool>> in(h, std::vector<bool>(w, false));
    in[seed_row][seed_col] = true;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                if (in[r][c] || std::abs(img[r][c] - s) > threshold) continue;
                const bool touches = (r > 0 && in[r - 1][c]) || (r + 1 < h && in[r + 1][c]) ||
                                     (c > 0 && in[r][c - 1]) || (c + 1 < w && in[r][c + 1]);
                if (touches) {
                    in[r][c] = true;
                    changed = true;
                }
            }
        }
    }
    return in;
}

// Pixel index for a normalized coordinate, ties toward the lower index:
// the largest i with i <= x*(n-1) + 0.5 - (exact half ? 1 : 0).
inline int pixel_index(double x, int n) {
    const double t = x * (n - 1);
    const double f = std::floor(t);
    return static_cast<int>(t - f > 0.5 ? f + 1 : f);
}

// The robot's procedure as an explicit table: API -> (required, produced).
inline const std::map<std::string, std::pair<sonoagent::Phase, sonoagent::Phase>>& transition_table() {
    using P = sonoagent::Phase;
    static const std::map<std::string, std::pair<P, P>> table{
        {"Init_Depth_Camera", {P::Uninitialized, P::CameraReady}},
        {"Display_Artery_Model", {P::CameraReady, P::ModelDisplayed}},
        {"Activate_Robot", {P::ModelDisplayed, P::RobotActive}},
        {"Start_Scan", {P::RobotActive, P::Scanned}},
        {"Image_Seg", {P::Scanned, P::Segmented}},
        {"Generate_Report", {P::Segmented, P::ReportGenerated}},
        {"Print_Report", {P::ReportGenerated, P::ReportPrinted}},
    };
    return table;
}

inline const std::vector<std::string>& golden_sequence() {
    static const std::vector<std::string> seq{"Init_Depth_Camera", "Display_Artery_Model", "Activate_Robot",
                                              "Start_Scan",        "Image_Seg",            "Generate_Report",
                                              "Print_Report"};
    return seq;
}

// A valid request for each API (what a well-behaved caller would send).
inline sonoagent::ToolCallRequest canonical_request(const std::string& api) {
    sonoagent::ToolCallRequest r{api, {}};
    if (api == "Start_Scan") r.parameters["target"] = std::string("carotid");
    if (api == "Image_Seg") {
        r.parameters["position"] = std::array<double, 2>{0.5, 0.5};
        r.parameters["threshold"] = 0.2;
    }
    return r;
}

struct ModelCheckReport {
    std::size_t states_explored = 0;
    std::size_t sequences_reaching_goal = 0;
    bool only_golden_reaches_goal = true;
    std::vector<std::string> offending;
};

// Breadth-first over call sequences up to `max_len`, merging prefixes that
// leave the robot in the same (phase, successful-call history). Image_Seg
// is seeded on the scan's target so segmentation is not the limiting factor.
template <class InvokeFn>
ModelCheckReport model_check(const sonoagent::RobotState& start, int max_len, InvokeFn invoke_call) {
    using sonoagent::Phase;
    struct Node {
        sonoagent::RobotState state;
        std::vector<std::string> successes;
    };
    ModelCheckReport report;
    std::set<std::pair<Phase, std::vector<std::string>>> seen;
    std::vector<Node> frontier{{start, {}}};
    seen.insert({start.phase, {}});
    for (int depth = 0; depth < max_len && !frontier.empty(); ++depth) {
        std::vector<Node> next;
        for (const auto& node : frontier) {
            for (const auto& api : golden_sequence()) {
                auto [state, obs] = invoke_call(node.state, api);
                auto successes = node.successes;
                if (obs.ok) successes.push_back(api);
                if (state.phase == Phase::ReportPrinted && node.state.phase != Phase::ReportPrinted) {
                    ++report.sequences_reaching_goal;
                    if (successes != golden_sequence()) {
                        report.only_golden_reaches_goal = false;
                        std::string s;
                        for (const auto& a : successes) s += a + " ";
                        report.offending.push_back(s);
                    }
                }
                if (seen.insert({state.phase, successes}).second) next.push_back({std::move(state), std::move(successes)});
            }
        }
        report.states_explored += next.size();
        frontier = std::move(next);
    }
    return report;
}

}  // namespace oracle
