#include "sonoagent/api_spec.hpp"

#include <set>

#include "sonoagent/errors.hpp"

namespace sonoagent {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidInput: return "InvalidInput";
        case ErrorCode::BackendUnavailable: return "BackendUnavailable";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::EmptyIndex: return "EmptyIndex";
        case ErrorCode::DuplicateKey: return "DuplicateKey";
        case ErrorCode::UnknownGoldKey: return "UnknownGoldKey";
        case ErrorCode::DatasetFormat: return "DatasetFormat";
        case ErrorCode::DuplicateApi: return "DuplicateApi";
        case ErrorCode::MalformedTemplate: return "MalformedTemplate";
        case ErrorCode::UnknownApi: return "UnknownApi";
        case ErrorCode::MissingParameter: return "MissingParameter";
        case ErrorCode::UnknownParameter: return "UnknownParameter";
        case ErrorCode::KindMismatch: return "KindMismatch";
        case ErrorCode::PositionOutOfRange: return "PositionOutOfRange";
        case ErrorCode::ThresholdOutOfRange: return "ThresholdOutOfRange";
        case ErrorCode::ScriptExhausted: return "ScriptExhausted";
        case ErrorCode::RemoteError: return "RemoteError";
        case ErrorCode::NoApisListed: return "NoApisListed";
        case ErrorCode::SessionClosed: return "SessionClosed";
        case ErrorCode::InsufficientTemplates: return "InsufficientTemplates";
        case ErrorCode::UnknownSession: return "UnknownSession";
        case ErrorCode::ModeConflict: return "ModeConflict";
    }
    return "Unknown";
}

std::string_view to_string(ParamKind kind) {
    switch (kind) {
        case ParamKind::Real: return "real";
        case ParamKind::RealPair: return "real-pair";
        case ParamKind::Integer: return "integer";
        case ParamKind::Text: return "text";
        case ParamKind::Boolean: return "boolean";
        case ParamKind::Enum: return "enum";
    }
    return "unknown";
}

std::optional<ParamKind> param_kind_from_string(std::string_view name) {
    for (auto kind : {ParamKind::Real, ParamKind::RealPair, ParamKind::Integer, ParamKind::Text,
                      ParamKind::Boolean, ParamKind::Enum}) {
        if (to_string(kind) == name) return kind;
    }
    return std::nullopt;
}

std::string ParamSpec::kind_label() const {
    if (kind != ParamKind::Enum) return std::string(to_string(kind));
    std::string label = "enum(";
    for (std::size_t i = 0; i < enum_values.size(); ++i) {
        if (i) label += '|';
        label += enum_values[i];
    }
    return label + ")";
}

const ParamSpec* ApiSpec::find_parameter(std::string_view param) const {
    for (const auto& p : parameters) {
        if (p.name == param) return &p;
    }
    return nullptr;
}

namespace {

std::string require_string(const nlohmann::json& j, const char* field) {
    if (!j.is_object() || !j.contains(field) || !j.at(field).is_string()) {
        throw Error(ErrorCode::DatasetFormat, std::string("missing string field '") + field + "'");
    }
    return j.at(field).get<std::string>();
}

}  // namespace

ApiSpec api_spec_from_json(const nlohmann::json& j) {
    ApiSpec spec;
    spec.name = require_string(j, "name");
    if (spec.name.empty()) throw Error(ErrorCode::DatasetFormat, "api name is empty");
    spec.description = require_string(j, "description");
    std::set<std::string> seen;
    if (j.contains("parameters")) {
        if (!j.at("parameters").is_array()) {
            throw Error(ErrorCode::DatasetFormat, "'parameters' must be an array");
        }
        for (const auto& pj : j.at("parameters")) {
            ParamSpec p;
            p.name = require_string(pj, "name");
            const auto kind_name = require_string(pj, "kind");
            auto kind = param_kind_from_string(kind_name);
            if (!kind) throw Error(ErrorCode::DatasetFormat, "unknown parameter kind '" + kind_name + "'");
            p.kind = *kind;
            p.description = pj.value("description", "");
            p.required = pj.value("required", true);
            if (p.kind == ParamKind::Enum) {
                if (!pj.contains("values") || !pj.at("values").is_array() || pj.at("values").empty()) {
                    throw Error(ErrorCode::DatasetFormat, "enum parameter '" + p.name + "' needs values");
                }
                p.enum_values = pj.at("values").get<std::vector<std::string>>();
            }
            if (!seen.insert(p.name).second) {
                throw Error(ErrorCode::DuplicateApi,
                            "parameter '" + p.name + "' repeated in " + spec.name);
            }
            spec.parameters.push_back(std::move(p));
        }
    }
    return spec;
}

nlohmann::json to_json(const ApiSpec& spec) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : spec.parameters) {
        nlohmann::json pj = {{"name", p.name},
                             {"kind", std::string(to_string(p.kind))},
                             {"description", p.description},
                             {"required", p.required}};
        if (p.kind == ParamKind::Enum) pj["values"] = p.enum_values;
        params.push_back(std::move(pj));
    }
    return {{"name", spec.name}, {"description", spec.description}, {"parameters", params}};
}

const ApiSpec* find_api(std::span<const ApiSpec> registry, std::string_view name) {
    for (const auto& spec : registry) {
        if (spec.name == name) return &spec;
    }
    return nullptr;
}

void check_registry(std::span<const ApiSpec> registry) {
    std::set<std::string_view> names;
    for (const auto& spec : registry) {
        if (spec.name.empty()) throw Error(ErrorCode::InvalidInput, "api name is empty");
        if (!names.insert(spec.name).second) {
            throw Error(ErrorCode::DuplicateApi, "duplicate api '" + spec.name + "'");
        }
    }
}

const std::vector<ApiSpec>& default_registry() {
    static const std::vector<ApiSpec> registry = [] {
        std::vector<ApiSpec> r;
        r.push_back({"Init_Depth_Camera",
                     "Powers up and calibrates the depth camera that locates the patient on the bed.",
                     {}});
        r.push_back({"Display_Artery_Model",
                     "Shows the three-dimensional anatomy model used to plan the probe path.",
                     {{"opacity", ParamKind::Real, "Rendering opacity of the model in [0,1].", false, {}}}});
        r.push_back({"Activate_Robot",
                     "Activates the robotic arm holding the ultrasound probe.",
                     {{"compliant_mode", ParamKind::Boolean,
                       "Enable compliant force control while the probe touches the skin.", false, {}}}});
        r.push_back({"Start_Scan",
                     "Sweeps the probe over the requested body region and acquires an ultrasound image.",
                     {{"target", ParamKind::Enum, "Body region to scan.", true, {"carotid", "spine", "rib"}}}});
        r.push_back({"Image_Seg",
                     "Segments the acquired scan image around the structure of interest, such as the patient's artery.",
                     {{"position", ParamKind::RealPair, "Normalized image location (x, y) of the structure.", true, {}},
                      {"threshold", ParamKind::Real, "Intensity tolerance of the segmented area.", true, {}}}});
        r.push_back({"Generate_Report",
                     "Compiles the scan and segmentation findings into a clinical report.",
                     {{"notes", ParamKind::Text, "Free-text remarks to include in the report.", false, {}}}});
        r.push_back({"Print_Report",
                     "Prints the generated report for the physician.",
                     {{"copies", ParamKind::Integer, "Number of printed copies.", false, {}}}});
        return r;
    }();
    return registry;
}

}  // namespace sonoagent
