#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sonoagent/errors.hpp"
#include "sonoagent/knowledge_store.hpp"
#include "sonoagent/prompt_assembler.hpp"

using namespace sonoagent;

namespace {

std::size_t count(const std::string& hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
    return n;
}

const ApiSpec& api(const std::string& name) { return *find_api(default_registry(), name); }

}  // namespace

TEST(Registry, SevenApisInHandbookOrder) {
    const auto& reg = default_registry();
    ASSERT_EQ(reg.size(), 7u);
    for (std::size_t i = 0; i < reg.size(); ++i) EXPECT_EQ(reg[i].name, oracle::golden_sequence()[i]);
    const auto& seg = api("Image_Seg");
    ASSERT_EQ(seg.parameters.size(), 2u);
    EXPECT_EQ(seg.parameters[0].name, "position");
    EXPECT_EQ(seg.parameters[0].kind, ParamKind::RealPair);
    EXPECT_EQ(seg.parameters[1].name, "threshold");
    EXPECT_EQ(seg.parameters[1].kind, ParamKind::Real);
    EXPECT_EQ(api("Start_Scan").parameters[0].kind_label(), "enum(carotid|spine|rib)");
}

TEST(Registry, ShippedSpecsFileMatches) {
    EXPECT_EQ(load_api_specs(oracle::source_dir() / "data" / "api_specs.jsonl"), default_registry());
}

TEST(Registry, JsonRoundTripAndErrors) {
    for (const auto& spec : default_registry()) EXPECT_EQ(api_spec_from_json(to_json(spec)), spec);
    EXPECT_THROW(api_spec_from_json(nlohmann::json::parse(R"({"description":"x","parameters":[]})")), Error);
    auto dup = to_json(api("Image_Seg"));
    dup["parameters"].push_back(dup["parameters"][0]);
    try {
        api_spec_from_json(dup);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DuplicateApi);
    }
    std::vector<ApiSpec> twice{api("Start_Scan"), api("Start_Scan")};
    EXPECT_THROW(check_registry(twice), Error);
}

TEST(PromptTemplate, DefaultMatchesShippedFile) {
    const auto file = oracle::read_file(oracle::source_dir() / "templates" / "ultrasound_assistant.txt");
    EXPECT_EQ(PromptTemplate::default_template().text(), file);
    EXPECT_NO_THROW(PromptTemplate::load(oracle::source_dir() / "templates" / "ultrasound_assistant.txt"));
}

TEST(PromptTemplate, RejectsBrokenTemplates) {
    const std::string good = PromptTemplate::default_template().text();
    auto expect_malformed = [](std::string text) {
        try {
            PromptTemplate t(std::move(text));
            ADD_FAILURE() << "accepted";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::MalformedTemplate);
        }
    };
    auto without = [&](std::string_view piece) {
        std::string t = good;
        t.erase(t.find(piece), piece.size());
        return t;
    };
    expect_malformed(without(kApiListSlot));
    expect_malformed(without(kHandbookSlot));
    expect_malformed(without(kStartSentinel));
    expect_malformed(without(kEndSentinel));
    expect_malformed(without(kOneCallRule));
    expect_malformed(without("\"api_name\""));
    expect_malformed(good + "{{api_list}}");
}

TEST(AssemblePrompt, FullContext) {
    const std::vector<ApiSpec> apis{api("Start_Scan"), api("Image_Seg")};
    const HandbookEntry hb{"proc-0042", "Perform a carotid artery ultrasound scan",
                           "Carotid artery ultrasound procedure: initialize the depth camera, then print the report."};
    const auto p = assemble_prompt("Perform a carotid artery ultrasound scan", apis, hb);
    EXPECT_EQ(p.user_text, "Perform a carotid artery ultrasound scan");
    EXPECT_EQ(count(p.system_text, "[API] "), 2u);
    EXPECT_NE(p.system_text.find("[API] Start_Scan\nDescription: "), std::string::npos);
    EXPECT_NE(p.system_text.find("  - position (real-pair): "), std::string::npos);
    EXPECT_NE(p.system_text.find("  - threshold (real): "), std::string::npos);
    EXPECT_NE(p.system_text.find("Procedure Guidance (proc-0042):\n" + hb.handbook_text), std::string::npos);
    EXPECT_EQ(count(p.system_text, kOneCallRule), 1u);
    EXPECT_EQ(count(p.system_text, kStartSentinel), 1u);
    EXPECT_EQ(p.system_text.find("{{"), std::string::npos);
    EXPECT_EQ(p.included_api_names, (std::vector<std::string>{"Start_Scan", "Image_Seg"}));
    EXPECT_EQ(p.included_procedure_ids, std::vector<std::string>{"proc-0042"});
    // API list comes before the guidance, in input order.
    EXPECT_LT(p.system_text.find("[API] Start_Scan"), p.system_text.find("[API] Image_Seg"));
    EXPECT_LT(p.system_text.find("[API] Image_Seg"), p.system_text.find("Procedure Guidance"));
}

TEST(AssemblePrompt, NoHandbookAndNoApis) {
    const std::vector<ApiSpec> apis{api("Init_Depth_Camera")};
    const auto uar_only = assemble_prompt("scan", apis, std::nullopt);
    EXPECT_EQ(uar_only.system_text.find(kProcedureGuidanceHeader), std::string::npos);
    EXPECT_NE(uar_only.system_text.find(kNoProcedureLine), std::string::npos);
    EXPECT_TRUE(uar_only.included_procedure_ids.empty());

    const auto bare = assemble_prompt("scan", {}, std::nullopt);
    EXPECT_EQ(bare.system_text.find("[API]"), std::string::npos);
    EXPECT_TRUE(bare.included_api_names.empty());
    // Protocol rules survive even with nothing retrieved.
    EXPECT_NE(bare.system_text.find(kOneCallRule), std::string::npos);
}

TEST(AssemblePrompt, PlaceholderTextInValuesIsNotExpanded) {
    const HandbookEntry hb{"p", "q", "literal {{api_list}} stays"};
    const std::vector<ApiSpec> apis{api("Init_Depth_Camera")};
    const auto p = assemble_prompt("x", apis, hb);
    EXPECT_NE(p.system_text.find("literal {{api_list}} stays"), std::string::npos);
    EXPECT_EQ(count(p.system_text, "[API] "), 1u);
}

TEST(AssemblePrompt, Errors) {
    try {
        assemble_prompt("", {}, std::nullopt);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
    }
    const std::vector<ApiSpec> dup{api("Start_Scan"), api("Start_Scan")};
    try {
        assemble_prompt("x", dup, std::nullopt);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DuplicateApi);
    }
}
