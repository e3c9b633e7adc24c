#include "sonoagent/prompt_assembler.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "sonoagent/errors.hpp"

namespace sonoagent {

namespace {

// Mirrors templates/ultrasound_assistant.txt; a unit test keeps them equal.
constexpr std::string_view kDefaultTemplate =
    "Role: You are an assistant that operates a robotic ultrasound system. You solve scanning "
    "requests one step at a time by calling the robot's APIs.\n"
    "\n"
    "Instruction: Decide whether the request needs an API call. To call an API, write a JSON "
    "object with the fields \"api_name\" and \"parameters\" and wrap it between <|sot|> and "
    "<|eot|>. After each call you receive an observation with the result; use it to choose the "
    "next step. If no API call is needed, answer the user directly.\n"
    "\n"
    "APIs List: Only one API may be invoked per interaction. The available APIs are:\n"
    "{{api_list}}\n"
    "\n"
    "{{handbook}}\n";

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
    std::size_t count = 0;
    for (auto pos = haystack.find(needle); pos != std::string_view::npos;
         pos = haystack.find(needle, pos + needle.size())) {
        ++count;
    }
    return count;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
    for (auto slot : {kApiListSlot, kHandbookSlot}) {
        const auto n = count_occurrences(text_, slot);
        if (n != 1) {
            throw Error(ErrorCode::MalformedTemplate,
                        "placeholder " + std::string(slot) + " appears " + std::to_string(n) + " times");
        }
    }
    for (auto rule : {kStartSentinel, kEndSentinel, kOneCallRule, std::string_view("\"api_name\""),
                      std::string_view("\"parameters\"")}) {
        if (text_.find(rule) == std::string::npos) {
            throw Error(ErrorCode::MalformedTemplate, "template lacks " + std::string(rule));
        }
    }
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::InvalidInput, "cannot read template " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return PromptTemplate(ss.str());
}

const PromptTemplate& PromptTemplate::default_template() {
    static const PromptTemplate tmpl{std::string(kDefaultTemplate)};
    return tmpl;
}

std::string render_api_list(std::span<const ApiSpec> specs) {
    check_registry(specs);
    std::string out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& spec = specs[i];
        if (i) out += "\n";
        out += "[API] " + spec.name + "\n";
        out += "Description: " + spec.description + "\n";
        out += "Parameters:\n";
        for (const auto& p : spec.parameters) {
            out += "  - " + p.name + " (" + p.kind_label() + "): " + p.description;
            if (!p.required) out += " (optional)";
            out += "\n";
        }
    }
    return out;
}

std::string render_handbook(const std::optional<HandbookEntry>& handbook) {
    if (!handbook) return std::string(kNoProcedureLine);
    return std::string(kProcedureGuidanceHeader) + " (" + handbook->procedure_id + "):\n" + handbook->handbook_text;
}

AssembledPrompt assemble_prompt(std::string_view instruction, std::span<const ApiSpec> apis,
                                const std::optional<HandbookEntry>& handbook, const PromptTemplate& tmpl) {
    if (instruction.empty()) throw Error(ErrorCode::InvalidInput, "instruction is empty");

    std::string api_list = render_api_list(apis);
    if (!api_list.empty() && api_list.back() == '\n') api_list.pop_back();

    // Substitute against slot positions in the template itself, so neither
    // value is ever scanned for the other placeholder.
    const std::string& t = tmpl.text();
    struct Slot {
        std::size_t pos;
        std::size_t len;
        std::string value;
    };
    std::vector<Slot> slots{{t.find(kApiListSlot), kApiListSlot.size(), std::move(api_list)},
                            {t.find(kHandbookSlot), kHandbookSlot.size(), render_handbook(handbook)}};
    if (slots[1].pos < slots[0].pos) std::swap(slots[0], slots[1]);

    AssembledPrompt prompt;
    std::size_t cursor = 0;
    for (const auto& slot : slots) {
        prompt.system_text.append(t, cursor, slot.pos - cursor);
        prompt.system_text += slot.value;
        cursor = slot.pos + slot.len;
    }
    prompt.system_text.append(t, cursor, std::string::npos);

    prompt.user_text = std::string(instruction);
    for (const auto& spec : apis) prompt.included_api_names.push_back(spec.name);
    if (handbook) prompt.included_procedure_ids.push_back(handbook->procedure_id);
    return prompt;
}

}  // namespace sonoagent
