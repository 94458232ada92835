#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "xrseq/metadata.hpp"
#include "xrseq/rng.hpp"

using namespace xrseq;

namespace {

const char* kHeader =
    "Image Index,Finding Labels,Follow-up #,Patient ID,Patient Age,Patient Gender,View Position";

std::vector<XrayRecord> parse(const std::string& csv) {
  std::istringstream in(csv);
  return parse_metadata(in);
}

std::string nih_row(const std::string& image, const std::string& labels, int followup, int patient,
                    const std::string& view, int age = 58, const std::string& gender = "M") {
  return image + "," + labels + "," + std::to_string(followup) + "," + std::to_string(patient) +
         "," + std::to_string(age) + "," + gender + "," + view;
}

}  // namespace

TEST_CASE("label vocabulary is fixed and closed") {
  REQUIRE(kNumLabels == 15);
  REQUIRE(label_name(kNoFindingIndex) == "No Finding");
  REQUIRE(find_label("Atelectasis").value() == 0);
  REQUIRE(find_label("Pneumothorax").value() == 13);
  REQUIRE_FALSE(find_label("Covid").has_value());
  REQUIRE_FALSE(find_label("atelectasis").has_value());  // case-sensitive
  std::set<std::string_view> unique(kLabelVocabulary.begin(), kLabelVocabulary.end());
  REQUIRE(unique.size() == kLabelVocabulary.size());
}

TEST_CASE("parse_metadata splits multi-label rows on '|'") {
  const auto records = parse(std::string(kHeader) + "\n" +
                             nih_row("00000013_023.png", "Infiltration|Mass|Pneumothorax", 0, 13, "PA"));
  REQUIRE(records.size() == 1);
  const auto& r = records[0];
  CHECK(r.image_index == "00000013_023.png");
  CHECK(r.patient_id == 13);
  CHECK(r.followup_num == 0);
  CHECK(r.view == ViewPosition::PA);
  CHECK(r.labels == std::vector<int>{*find_label("Infiltration"), *find_label("Mass"),
                                     *find_label("Pneumothorax")});
}

TEST_CASE("parse_metadata: No Finding stays a singleton label set") {
  const auto records = parse(std::string(kHeader) + "\n" + nih_row("a.png", "No Finding", 0, 1, "AP"));
  REQUIRE(records.size() == 1);
  CHECK(records[0].labels == std::vector<int>{kNoFindingIndex});
}

TEST_CASE("parse_metadata error taxonomy") {
  SECTION("unknown label") {
    try {
      parse(std::string(kHeader) + "\n" + nih_row("a.png", "Covid", 0, 1, "PA"));
      FAIL("expected UnknownLabel");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::unknown_label);
    }
  }
  SECTION("missing required column") {
    try {
      parse("Image Index,Finding Labels,Follow-up #,Patient ID,Patient Age,Patient Gender\n");
      FAIL("expected MissingColumn");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::missing_column);
    }
  }
  SECTION("non-integer follow-up") {
    try {
      parse(std::string(kHeader) + "\n" + "a.png,Mass,x,1,58,M,PA");
      FAIL("expected MalformedRow");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::malformed_row);
    }
  }
  SECTION("unknown view token") {
    try {
      parse(std::string(kHeader) + "\n" + nih_row("a.png", "Mass", 0, 1, "LL"));
      FAIL("expected MalformedRow");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::malformed_row);
    }
  }
}

TEST_CASE("parse_metadata tolerates NIH header quirks and extra columns") {
  // the real header splits its bracketed names across cells and ends with
  // a trailing comma; both just become extra columns
  const std::string header =
      "Image Index,Finding Labels,Follow-up #,Patient ID,Patient Age,Patient Gender,View Position,"
      "OriginalImage[Width,Height],OriginalImagePixelSpacing[x,y],";
  const auto records = parse(header + "\n" + "a.png,Mass,0,7,058Y,F,PA,1024,1024,0.143,0.143,\n");
  REQUIRE(records.size() == 1);
  CHECK(records[0].age == 58);  // unit suffix handled as leading integer
  CHECK(records[0].gender == 'F');
  CHECK(records[0].extras.size() == 5);
}

TEST_CASE("metadata round-trips through serialize + parse") {
  const std::string csv =
      std::string(kHeader) + "\n" + nih_row("00000001_000.png", "Cardiomegaly|Infiltration", 0, 1, "PA") +
      "\n" + nih_row("00000001_001.png", "No Finding", 1, 1, "PA", 61, "F") + "\n" +
      nih_row("00000002_000.png", "Mass", 0, 2, "AP") + "\n";
  const auto records = parse(csv);
  std::ostringstream out;
  serialize_metadata(records, out);
  const auto reparsed = parse(out.str());
  CHECK(reparsed == records);
}

TEST_CASE("group_patients sorts by follow-up and orders groups by patient id") {
  const auto records = parse(std::string(kHeader) + "\n" + nih_row("c.png", "Mass", 2, 13, "PA") + "\n" +
                             nih_row("a.png", "Mass", 0, 13, "PA") + "\n" +
                             nih_row("b.png", "Mass", 1, 13, "PA") + "\n" +
                             nih_row("d.png", "Edema", 0, 2, "AP"));
  const auto groups = group_patients(records);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].patient_id == 2);
  CHECK(groups[1].patient_id == 13);
  REQUIRE(groups[1].records.size() == 3);
  CHECK(groups[1].records[0].followup_num == 0);
  CHECK(groups[1].records[1].followup_num == 1);
  CHECK(groups[1].records[2].followup_num == 2);
}

TEST_CASE("group_patients rejects duplicate follow-up numbers") {
  const auto records = parse(std::string(kHeader) + "\n" + nih_row("a.png", "Mass", 0, 5, "PA") + "\n" +
                             nih_row("b.png", "Mass", 0, 5, "PA"));
  try {
    group_patients(records);
    FAIL("expected DuplicateFollowup");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::duplicate_followup);
  }
}

namespace {

PatientGroup make_group(int pid, int n_records, ViewPosition view = ViewPosition::PA) {
  PatientGroup g;
  g.patient_id = pid;
  for (int i = 0; i < n_records; ++i) {
    XrayRecord r;
    r.image_index = std::to_string(pid) + "_" + std::to_string(i) + ".png";
    r.patient_id = pid;
    r.followup_num = i;
    r.labels = {*find_label("Mass")};
    r.view = view;
    g.records.push_back(r);
  }
  return g;
}

}  // namespace

TEST_CASE("filter_min_followups keeps exactly the patients with >= 3 records") {
  std::vector<PatientGroup> groups = {make_group(1, 3), make_group(2, 2), make_group(3, 1),
                                      make_group(4, 7)};
  const auto kept = filter_min_followups(groups);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].patient_id == 1);  // boundary: exactly 3 records
  CHECK(kept[1].patient_id == 4);
}

TEST_CASE("filter_consistent_view drops patients mixing PA and AP") {
  auto mixed = make_group(2, 3);
  mixed.records[2].view = ViewPosition::AP;
  std::vector<PatientGroup> groups = {make_group(1, 3, ViewPosition::PA), mixed,
                                      make_group(3, 4, ViewPosition::AP)};
  const auto kept = filter_consistent_view(groups);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].patient_id == 1);
  CHECK(kept[1].patient_id == 3);
}

TEST_CASE("filters are idempotent and only remove") {
  std::vector<PatientGroup> groups;
  DeterministicRng rng(7);
  for (int pid = 1; pid <= 40; ++pid) {
    auto g = make_group(pid, 1 + static_cast<int>(rng.next_below(6)));
    for (auto& r : g.records) {
      if (rng.next_unit() < 0.3) r.view = ViewPosition::AP;
    }
    groups.push_back(std::move(g));
  }
  const auto f1 = filter_min_followups(groups);
  const auto f1f1 = filter_min_followups(f1);
  CHECK(f1.size() == f1f1.size());
  const auto f2 = filter_consistent_view(f1);
  const auto f2f2 = filter_consistent_view(f2);
  CHECK(f2.size() == f2f2.size());
  CHECK(f2.size() <= f1.size());
  CHECK(f1.size() <= groups.size());
  for (const auto& g : f2) {
    CHECK(g.records.size() >= 3);
    for (const auto& r : g.records) CHECK(r.view == g.records.front().view);
  }
}
