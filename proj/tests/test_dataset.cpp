#include "counsel/dataset.hpp"

#include "support.hpp"

#include <catch_amalgamated.hpp>

#include <regex>

using namespace counsel;
using namespace counsel::dataset;

namespace {

RawDialogue dialogue(std::vector<Exchange> ex, std::string id = "d1") { return {std::move(id), std::move(ex), {}}; }

const Clock kClock = frozen_clock(testing::kFrozenTime);

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("parse_raw") {
    CHECK(parse_raw("", "jsonl").dialogues.empty());

    const auto jsonl = parse_raw("{\"dialogue_id\":\"a\",\"speaker\":\"user\",\"text\":\"hi\"}\n{broken\n", "jsonl");
    CHECK(jsonl.dialogues.size() == 1);
    REQUIRE(jsonl.skipped.size() == 1);
    CHECK(jsonl.skipped[0].line == 2);

    const auto csv = parse_raw("dialogue_id,speaker,text\nx,user,one\nx,therapist,\"two, with comma\"\nx,user,three\n", "csv");
    REQUIRE(csv.dialogues.size() == 1);
    CHECK(csv.dialogues[0].exchanges.size() == 3);
    CHECK(csv.dialogues[0].exchanges[1].text == "two, with comma");

    const auto order = parse_raw("dialogue_id,speaker,text\nb,user,1\na,user,2\nb,therapist,3\n", "csv");
    REQUIRE(order.dialogues.size() == 2);
    CHECK(order.dialogues[0].source_id == "b");

    const auto bad_rows = parse_raw("dialogue_id,speaker,text\nx,user\nx,user,ok\n", "csv");
    CHECK(bad_rows.skipped.size() == 1);

    CHECK_THROWS_AS(parse_raw("a,b\n", "csv"), Error);
    CHECK_THROWS_AS(parse_raw("{}", "xml"), Error);
    CHECK_THROWS_AS(parse_raw("\xFF\xFE", "jsonl"), Error);

    const auto bom = parse_raw("\xEF\xBB\xBF{\"dialogue_id\":\"a\",\"speaker\":\"u\",\"text\":\"t\",\"demo_age\":\"30\"}\n", "jsonl");
    REQUIRE(bom.dialogues.size() == 1);
    CHECK(bom.dialogues[0].raw_metadata.at("demo_age") == "30");
}

TEST_CASE("anonymize") {
    const auto rules = default_pii_rules();
    const auto [mail, report] = anonymize(dialogue({{"user", "mail me at jane.doe@example.com"}}), rules);
    CHECK(mail.exchanges[0].text == "mail me at [EMAIL]");
    CHECK(report.count(PiiClass::Email) == 1);
    CHECK(report.total == 1);
    // Independent single-regex oracle on the original string.
    CHECK(std::regex_search(std::string("mail me at jane.doe@example.com"), std::regex(R"(\S+@\S+\.\w+)")));

    const auto [plain, none] = anonymize(dialogue({{"user", "nothing to hide here"}}), rules);
    CHECK(plain.exchanges[0].text == "nothing to hide here");
    CHECK(none.total == 0);

    const auto [fixed, zero] = anonymize(dialogue({{"user", "[EMAIL] [PHONE] [URL] [NAME] [ID]"}}), rules);
    CHECK(fixed.exchanges[0].text == "[EMAIL] [PHONE] [URL] [NAME] [ID]");
    CHECK(zero.total == 0);

    const auto [all, counts] = anonymize(
        dialogue({{"user", "See https://x.example.com/a, call (415) 555-0199, ask Dr. Jane Roe, ref 12345678."}}), rules);
    CHECK(all.exchanges[0].text == "See [URL], call [PHONE], ask [NAME], ref [ID].");
    CHECK(counts.total == 4);
    CHECK(count_pii_matches(all.exchanges[0].text, rules) == 0);

    CHECK_THROWS_AS(anonymize(dialogue({{"u", "x"}}), PiiRuleSet{}), Error);
}

TEST_CASE("clean") {
    CHECK_FALSE(clean(dialogue({{"user", "   "}, {"therapist", "\n"}})).has_value());

    const auto four = clean(dialogue({{"user", "hello there"}, {"therapist", "  "}, {"therapist", "hi, go on"}, {"user", "ok then"}}));
    REQUIRE(four.has_value());
    CHECK(four->exchanges.size() == 3);

    const auto valid = dialogue({{"user", "I feel low"}, {"therapist", "Tell me more"}});
    CHECK(clean(valid) == valid);

    CHECK_FALSE(clean(dialogue({{"user", "one"}, {"user", "two"}})).has_value());
    const auto urls = clean(dialogue({{"user", "hello"}, {"therapist", "https://example.com"}, {"therapist", "[URL]"}, {"therapist", "k"}, {"therapist", "sure"}}));
    REQUIRE(urls.has_value());
    CHECK(urls->exchanges.size() == 2);
}

TEST_CASE("clean is idempotent") {
    std::mt19937 rng(11);
    const std::vector<std::string> texts{"", " ", "a", "ok", "https://x.org", "[URL]", "hello there", "I feel sad"};
    for (int i = 0; i < 300; ++i) {
        std::vector<Exchange> ex;
        const int n = std::uniform_int_distribution<int>(0, 6)(rng);
        for (int k = 0; k < n; ++k) ex.push_back({rng() % 2 ? "user" : "therapist", texts[rng() % texts.size()]});
        const auto once = clean(dialogue(ex));
        if (once) CHECK(clean(*once) == once);
    }
}

TEST_CASE("standardize") {
    const auto roles = RoleMap::shipped();
    const auto raw = dialogue({{"user", "I can't sleep"}, {"therapist", "How long has that been going on?"}});
    const auto rec = standardize(raw, "anxiety", {{"age_band", "25-34"}}, "", roles, kClock);
    CHECK(rec.turns[0].role == DialogueRole::Seeker);
    CHECK(rec.turns[1].role == DialogueRole::Counselor);
    CHECK(rec.provenance.source_id == "d1");
    CHECK(rec.provenance.ingested_at == testing::kFrozenTime);
    CHECK(rec.record_id == standardize(raw, "anxiety", {}, "", roles, kClock).record_id);
    CHECK_THROWS_AS(standardize(raw, " ", {}, "", roles, kClock), Error);

    const auto unknown = dialogue({{"alice", "hi there"}, {"bob", "hello"}});
    CHECK_THROWS_AS(standardize(unknown, "stress", {}, "", roles, kClock), Error);
}

TEST_CASE("record ids follow the digest rule") {
    // Frozen from Python hashlib over "d01\x1f<first text>".
    const auto raw = dialogue({{"user", "I get anxious before every presentation at work."}, {"therapist", "ok"}}, "d01");
    CHECK(record_id_for(raw) == "rec-3c54f7f32a0633fc");
}

TEST_CASE("role map") {
    const auto roles = RoleMap::shipped();
    CHECK(roles.lookup("Therapist") == DialogueRole::Counselor);
    CHECK(roles.lookup("CLIENT") == DialogueRole::Seeker);
    CHECK_FALSE(roles.lookup("narrator").has_value());
}

TEST_CASE("record JSONL round-trip") {
    const auto path = temp_path("counsel_records.jsonl");
    CHECK(write_records({}, path) == 0);
    CHECK(std::filesystem::file_size(path) == 0);
    CHECK(read_records(path).records.empty());

    std::mt19937 rng(5);
    std::vector<DialogueRecord> records;
    for (int i = 0; i < 25; ++i) {
        DialogueRecord r;
        r.record_id = "rec-" + std::to_string(rng());
        r.topic = i % 2 ? "stress" : "anxiety \"quoted\"";
        if (rng() % 2) r.demographics["age_band"] = std::to_string(rng() % 80);
        r.context = i % 3 ? "" : "line one\nline two \xC3\xA9";
        const int n = 2 + static_cast<int>(rng() % 4);
        for (int k = 0; k < n; ++k) r.turns.push_back({k % 2 ? DialogueRole::Counselor : DialogueRole::Seeker, "t" + std::to_string(rng())});
        r.provenance = {"src" + std::to_string(i), testing::kFrozenTime};
        records.push_back(r);
    }
    CHECK(write_records(records, path) == records.size());
    const auto back = read_records(path);
    CHECK(back.errors.empty());
    CHECK(back.records == records);
    CHECK(read_file(path).find('\r') == std::string::npos);

    const auto three = read_file(path);
    std::istringstream in(three);
    std::string l1, l2;
    std::getline(in, l1);
    std::getline(in, l2);
    write_file(path, l1 + "\n{oops\n" + l2 + "\n");
    const auto partial = read_records(path);
    CHECK(partial.records.size() == 2);
    REQUIRE(partial.errors.size() == 1);
    CHECK(partial.errors[0].line == 2);
    std::filesystem::remove(path);
}

TEST_CASE("fixture corpus sweep") {
    const auto rules = default_pii_rules();
    const auto parsed = parse_raw(read_file(testing::data_dir() / "fixtures" / "dialogues.jsonl"), "jsonl");
    REQUIRE(parsed.dialogues.size() == 25);
    int planted = 0;
    for (const auto& d : parsed.dialogues) {
        for (const auto& e : d.exchanges) planted += count_pii_matches(e.text, rules);
    }
    CHECK(planted >= 20);
    for (const auto& d : parsed.dialogues) {
        const auto [anon, report] = anonymize(d, rules);
        for (const auto& e : anon.exchanges) CHECK(count_pii_matches(e.text, rules) == 0);
    }
}
