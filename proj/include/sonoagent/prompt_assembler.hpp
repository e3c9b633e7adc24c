#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sonoagent/api_spec.hpp"
#include "sonoagent/knowledge_store.hpp"

namespace sonoagent {

inline constexpr std::string_view kStartSentinel = "<|sot|>";
inline constexpr std::string_view kEndSentinel = "<|eot|>";
inline constexpr std::string_view kOneCallRule = "Only one API may be invoked per interaction.";
inline constexpr std::string_view kApiListSlot = "{{api_list}}";
inline constexpr std::string_view kHandbookSlot = "{{handbook}}";
inline constexpr std::string_view kProcedureGuidanceHeader = "Procedure Guidance";
inline constexpr std::string_view kNoProcedureLine = "No procedure retrieved.";

/// Template text with one {{api_list}} and one {{handbook}} placeholder.
/// Construction enforces the protocol rules: both sentinels, the
/// "api_name"/"parameters" field names and the one-call rule must appear
/// verbatim; violations throw Error(MalformedTemplate).
class PromptTemplate {
public:
    explicit PromptTemplate(std::string text);

    static PromptTemplate load(const std::filesystem::path& path);
    static const PromptTemplate& default_template();

    const std::string& text() const { return text_; }

private:
    std::string text_;
};

struct AssembledPrompt {
    std::string system_text;
    std::string user_text;
    std::vector<std::string> included_api_names;
    std::vector<std::string> included_procedure_ids;
};

/// One block per spec, in input order:
///
///     [API] Image_Seg
///     Description: ...
///     Parameters:
///       - position (real-pair): ...
///
/// Blocks are separated by a blank line. Throws Error(DuplicateApi).
std::string render_api_list(std::span<const ApiSpec> specs);

/// "Procedure Guidance (<id>):\n<text>" or kNoProcedureLine.
std::string render_handbook(const std::optional<HandbookEntry>& handbook);

/// Throws Error(InvalidInput) for an empty instruction. An empty `apis`
/// renders an empty API list (the no-retrieval ablation).
AssembledPrompt assemble_prompt(std::string_view instruction, std::span<const ApiSpec> apis,
                                const std::optional<HandbookEntry>& handbook,
                                const PromptTemplate& tmpl = PromptTemplate::default_template());

}  // namespace sonoagent
