#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segqa/stats.hpp"

namespace segqa {

/// Rating scale for a generated segmentation.
enum class Grade : int {
    kExcellent = 0,   // almost all organs visually correct
    kUsable = 1,      // major organs (liver, spleen) correct
    kGlobalFail = 2,  // major inconsistencies within organs
};

/// Throws ValidationError for anything outside {0, 1, 2}.
Grade grade_from_int(long long value);
int to_int(Grade g);
std::string grade_name(Grade g);

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

Timestamp now_utc();
/// "YYYY-MM-DDTHH:MM:SS.mmmZ"
std::string format_rfc3339(Timestamp t);
/// Accepts "Z" or "+HH:MM"/"-HH:MM" offsets and optional fractional seconds.
Timestamp parse_rfc3339(const std::string& text);

struct QaRecord {
    std::string study_id;
    std::string rater_id;
    Grade grade = Grade::kExcellent;
    std::string algorithm_version;
    Timestamp timestamp{};

    bool operator==(const QaRecord&) const = default;
};

enum class Role { kTrain, kEval, kCorrected };
std::string to_string(Role role);
Role role_from_string(const std::string& text);

struct ManifestEntry {
    std::string study_id;
    std::string image;
    std::optional<std::string> label;
    Role role = Role::kEval;
    // Synthetic cohorts only: marks phantom hard cases. Never used for training.
    std::optional<bool> hard;

    bool operator==(const ManifestEntry&) const = default;
};

struct CohortManifest {
    std::string cohort_id;
    std::vector<ManifestEntry> entries;
    // Directory relative paths are resolved against; not serialized.
    std::filesystem::path base_dir;

    const ManifestEntry* find(const std::string& study_id) const;
    bool contains(const std::string& study_id) const { return find(study_id) != nullptr; }
    std::filesystem::path resolve(const std::string& path) const;
    /// Throws ValidationError on empty or duplicate study ids.
    void validate() const;
};

CohortManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const CohortManifest& manifest);
std::string manifest_to_json(const CohortManifest& manifest);
CohortManifest manifest_from_json(const std::string& text);

/// Append-only grade log. When bound to a file every append is written as one
/// JSON line and flushed before returning; opening a file replays it.
class QaLedger {
public:
    QaLedger() = default;
    static QaLedger open(const std::filesystem::path& path);

    /// Rejects empty study ids and timestamps earlier than the last record.
    void append(const QaRecord& record);

    const std::vector<QaRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    const std::optional<std::filesystem::path>& path() const { return path_; }

    /// Latest grade per study for one algorithm version.
    std::map<std::string, Grade> effective(const std::string& version) const;
    /// Every version that has at least one record, sorted.
    std::vector<std::string> versions() const;

private:
    std::vector<QaRecord> records_;
    std::optional<std::filesystem::path> path_;
};

std::string record_to_json(const QaRecord& record);
QaRecord record_from_json(const std::string& line);

/// Appends after checking the study is listed in one of `manifests`.
void record_grade(QaLedger& ledger, std::span<const CohortManifest> manifests,
                  const QaRecord& record);

struct QualityBreakdown {
    double excellent = 0.0;  // fraction graded 0
    double usable = 0.0;     // fraction graded 1
    double fail = 0.0;       // fraction graded 2
    std::size_t graded = 0;
};

/// Effective grades of `version` restricted to the cohort's studies.
std::map<std::string, Grade> cohort_grades(const QaLedger& ledger, const CohortManifest& cohort,
                                           const std::string& version);

double failure_rate(const QaLedger& ledger, const CohortManifest& cohort,
                    const std::string& version);
QualityBreakdown quality_breakdown(const QaLedger& ledger, const CohortManifest& cohort,
                                   const std::string& version);

/// Every study whose effective grade is 2, as role=corrected entries with a
/// placeholder label path to be filled by the annotator.
CohortManifest export_failure_manifest(const QaLedger& ledger, const CohortManifest& cohort,
                                       const std::string& version);

/// Chi-squared over [[fail_a, ok_a], [fail_b, ok_b]] for studies graded under both versions.
stats::TestResult compare_failure_rates(const QaLedger& ledger, const CohortManifest& cohort,
                                        const std::string& version_a,
                                        const std::string& version_b);

/// Automated stand-in for a human rater on synthetic runs.
struct GradeProxy {
    double excellent_min = 0.8;
    double fail_below = 0.5;

    Grade grade(double mean_dice) const;
};

}  // namespace segqa
