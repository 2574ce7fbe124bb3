#include "segqa/ledger.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>

#include "json.hpp"
#include "segqa/error.hpp"

namespace segqa {

using json = nlohmann::json;

Grade grade_from_int(long long value) {
    if (value < 0 || value > 2)
        throw ValidationError("invalid grade " + std::to_string(value) + ", expected 0, 1 or 2");
    return static_cast<Grade>(value);
}

int to_int(Grade g) { return static_cast<int>(g); }

std::string grade_name(Grade g) {
    switch (g) {
        case Grade::kExcellent: return "excellent";
        case Grade::kUsable: return "usable";
        case Grade::kGlobalFail: return "global_fail";
    }
    return "unknown";
}

Timestamp now_utc() {
    return std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

std::string format_rfc3339(Timestamp t) {
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const hh_mm_ss hms{t - day};
    char buf[40];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", int(ymd.year()),
                  unsigned(ymd.month()), unsigned(ymd.day()), int(hms.hours().count()),
                  int(hms.minutes().count()), int(hms.seconds().count()),
                  int(hms.subseconds().count()));
    return buf;
}

Timestamp parse_rfc3339(const std::string& text) {
    using namespace std::chrono;
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0, consumed = 0;
    if (std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &s,
                    &consumed) != 6 ||
        consumed != 19)
        throw FormatError("invalid RFC3339 timestamp '" + text + "'");
    std::size_t pos = 19;
    long long millis = 0;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        int digits = 0;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
            if (digits < 3) millis = millis * 10 + (text[pos] - '0');
            ++digits;
            ++pos;
        }
        if (digits == 0) throw FormatError("invalid RFC3339 fraction in '" + text + "'");
        for (int i = digits; i < 3; ++i) millis *= 10;
    }
    minutes offset{0};
    if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z')) {
        ++pos;
    } else if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
        int oh = 0, om = 0;
        if (text.size() - pos != 6 || std::sscanf(text.c_str() + pos + 1, "%2d:%2d", &oh, &om) != 2)
            throw FormatError("invalid RFC3339 offset in '" + text + "'");
        offset = minutes(oh * 60 + om) * (text[pos] == '-' ? -1 : 1);
        pos = text.size();
    } else {
        throw FormatError("RFC3339 timestamp without offset '" + text + "'");
    }
    if (pos != text.size()) throw FormatError("trailing characters in timestamp '" + text + "'");
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                             day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 60)
        throw FormatError("invalid calendar date in '" + text + "'");
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + milliseconds{millis} - offset;
}

std::string to_string(Role role) {
    switch (role) {
        case Role::kTrain: return "train";
        case Role::kEval: return "eval";
        case Role::kCorrected: return "corrected";
    }
    return "eval";
}

Role role_from_string(const std::string& text) {
    if (text == "train") return Role::kTrain;
    if (text == "eval") return Role::kEval;
    if (text == "corrected") return Role::kCorrected;
    throw ValidationError("unknown manifest role '" + text + "'");
}

const ManifestEntry* CohortManifest::find(const std::string& study_id) const {
    for (const auto& e : entries)
        if (e.study_id == study_id) return &e;
    return nullptr;
}

std::filesystem::path CohortManifest::resolve(const std::string& path) const {
    const std::filesystem::path p(path);
    if (p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

void CohortManifest::validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries) {
        if (e.study_id.empty())
            throw ValidationError("manifest '" + cohort_id + "' has an empty study id");
        if (!seen.insert(e.study_id).second)
            throw ValidationError("manifest '" + cohort_id + "' lists study '" + e.study_id +
                                  "' twice");
    }
}

std::string manifest_to_json(const CohortManifest& manifest) {
    json entries = json::array();
    for (const auto& e : manifest.entries) {
        json j{{"study_id", e.study_id}, {"image", e.image}, {"role", to_string(e.role)}};
        j["label"] = e.label ? json(*e.label) : json(nullptr);
        if (e.hard) j["hard"] = *e.hard;
        entries.push_back(std::move(j));
    }
    return json{{"cohort_id", manifest.cohort_id}, {"entries", std::move(entries)}}.dump(2) + "\n";
}

CohortManifest manifest_from_json(const std::string& text) {
    CohortManifest m;
    try {
        const json j = json::parse(text);
        m.cohort_id = j.at("cohort_id").get<std::string>();
        for (const auto& e : j.at("entries")) {
            ManifestEntry entry;
            entry.study_id = e.at("study_id").get<std::string>();
            entry.image = e.at("image").get<std::string>();
            if (e.contains("label") && !e["label"].is_null())
                entry.label = e["label"].get<std::string>();
            entry.role = role_from_string(e.value("role", std::string("eval")));
            if (e.contains("hard")) entry.hard = e["hard"].get<bool>();
            m.entries.push_back(std::move(entry));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
    m.validate();
    return m;
}

CohortManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CohortManifest m = manifest_from_json(text);
    m.base_dir = path.parent_path();
    return m;
}

void save_manifest(const std::filesystem::path& path, const CohortManifest& manifest) {
    manifest.validate();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << manifest_to_json(manifest);
    if (!out) throw IoError("short write to manifest " + path.string());
}

std::string record_to_json(const QaRecord& r) {
    return json{{"study_id", r.study_id},
                {"rater_id", r.rater_id},
                {"grade", to_int(r.grade)},
                {"version", r.algorithm_version},
                {"timestamp", format_rfc3339(r.timestamp)}}
        .dump();
}

QaRecord record_from_json(const std::string& line) {
    try {
        const json j = json::parse(line);
        QaRecord r;
        r.study_id = j.at("study_id").get<std::string>();
        r.rater_id = j.at("rater_id").get<std::string>();
        r.grade = grade_from_int(j.at("grade").get<long long>());
        r.algorithm_version = j.at("version").get<std::string>();
        r.timestamp = parse_rfc3339(j.at("timestamp").get<std::string>());
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed ledger record: ") + e.what());
    }
}

QaLedger QaLedger::open(const std::filesystem::path& path) {
    QaLedger ledger;
    if (std::filesystem::exists(path)) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open ledger " + path.string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                ledger.append(record_from_json(line));
            } catch (const Error& e) {
                throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
    } else if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    ledger.path_ = path;
    return ledger;
}

void QaLedger::append(const QaRecord& record) {
    if (record.study_id.empty()) throw ValidationError("QA record has an empty study id");
    if (!records_.empty() && record.timestamp < records_.back().timestamp)
        throw ValidationError("QA record timestamp " + format_rfc3339(record.timestamp) +
                              " is earlier than the last record " +
                              format_rfc3339(records_.back().timestamp));
    if (path_) {
        std::ofstream out(*path_, std::ios::app);
        if (!out) throw IoError("cannot append to ledger " + path_->string());
        out << record_to_json(record) << '\n';
        out.flush();
        if (!out) throw IoError("short write to ledger " + path_->string());
    }
    records_.push_back(record);
}

std::map<std::string, Grade> QaLedger::effective(const std::string& version) const {
    // Records are timestamp-ordered, so the last one seen wins.
    std::map<std::string, Grade> out;
    for (const auto& r : records_)
        if (r.algorithm_version == version) out[r.study_id] = r.grade;
    return out;
}

std::vector<std::string> QaLedger::versions() const {
    std::set<std::string> v;
    for (const auto& r : records_) v.insert(r.algorithm_version);
    return {v.begin(), v.end()};
}

void record_grade(QaLedger& ledger, std::span<const CohortManifest> manifests,
                  const QaRecord& record) {
    const bool known = std::any_of(manifests.begin(), manifests.end(), [&](const auto& m) {
        return m.contains(record.study_id);
    });
    if (!known) throw NotFoundError("unknown study '" + record.study_id + "'");
    ledger.append(record);
}

std::map<std::string, Grade> cohort_grades(const QaLedger& ledger, const CohortManifest& cohort,
                                           const std::string& version) {
    std::map<std::string, Grade> out;
    for (const auto& [study, grade] : ledger.effective(version))
        if (cohort.contains(study)) out.emplace(study, grade);
    return out;
}

QualityBreakdown quality_breakdown(const QaLedger& ledger, const CohortManifest& cohort,
                                   const std::string& version) {
    const auto grades = cohort_grades(ledger, cohort, version);
    if (grades.empty())
        throw EmptyInputError("no grades for cohort '" + cohort.cohort_id + "' version '" +
                              version + "'");
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& [study, g] : grades) ++counts[to_int(g)];
    const double n = static_cast<double>(grades.size());
    return {static_cast<double>(counts[0]) / n, static_cast<double>(counts[1]) / n,
            static_cast<double>(counts[2]) / n, grades.size()};
}

double failure_rate(const QaLedger& ledger, const CohortManifest& cohort,
                    const std::string& version) {
    return quality_breakdown(ledger, cohort, version).fail;
}

CohortManifest export_failure_manifest(const QaLedger& ledger, const CohortManifest& cohort,
                                       const std::string& version) {
    CohortManifest out{cohort.cohort_id + "_failures", {}, cohort.base_dir};
    const auto grades = cohort_grades(ledger, cohort, version);
    for (const auto& e : cohort.entries) {
        const auto it = grades.find(e.study_id);
        if (it == grades.end() || it->second != Grade::kGlobalFail) continue;
        ManifestEntry entry = e;
        entry.role = Role::kCorrected;
        entry.label = "corrected/" + e.study_id + "/label.nii";
        out.entries.push_back(std::move(entry));
    }
    return out;
}

stats::TestResult compare_failure_rates(const QaLedger& ledger, const CohortManifest& cohort,
                                        const std::string& version_a,
                                        const std::string& version_b) {
    const auto a = cohort_grades(ledger, cohort, version_a);
    const auto b = cohort_grades(ledger, cohort, version_b);
    stats::Table2x2 table{};
    for (const auto& [study, grade_a] : a) {
        const auto it = b.find(study);
        if (it == b.end()) continue;
        ++table[0][grade_a == Grade::kGlobalFail ? 0 : 1];
        ++table[1][it->second == Grade::kGlobalFail ? 0 : 1];
    }
    return stats::chi_squared_2x2(table);
}

Grade GradeProxy::grade(double mean_dice) const {
    if (mean_dice >= excellent_min) return Grade::kExcellent;
    if (mean_dice < fail_below) return Grade::kGlobalFail;
    return Grade::kUsable;
}

}  // namespace segqa
