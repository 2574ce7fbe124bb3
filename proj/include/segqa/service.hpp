#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "segqa/ledger.hpp"
#include "segqa/slice.hpp"

namespace httplib {
class Server;
}

namespace segqa {

struct HttpResponse {
    int status = 200;
    std::string body;
};

using QueryParams = std::map<std::string, std::string>;

std::string slice_to_json(const SlicePayload& payload);
SlicePayload slice_from_json(const std::string& text);

/// Request handlers behind the review HTTP API, independent of the transport.
///
/// Data directory layout:
///   manifests/*.json                          cohort manifests
///   <cohort>/manifest.json                    manifests written by phantom-gen
///   predictions/<version>/<study>/label.nii   segmentations to review
///   qa_ledger.ndjson                          grade log
class ReviewService {
public:
    explicit ReviewService(const std::filesystem::path& data_dir);

    HttpResponse queue(const QueryParams& q);
    HttpResponse study(const std::string& study_id);
    HttpResponse slice(const std::string& study_id, const std::string& axis,
                       const std::string& index, const QueryParams& q);
    HttpResponse grade(const std::string& study_id, const std::string& body);
    HttpResponse failure_rates(const QueryParams& q);
    HttpResponse quality_breakdown(const QueryParams& q);

    const std::vector<CohortManifest>& manifests() const { return manifests_; }
    std::filesystem::path prediction_path(const std::string& version,
                                          const std::string& study_id) const;
    QaLedger ledger_snapshot() const;

private:
    struct Located {
        const CohortManifest* manifest;
        const ManifestEntry* entry;
    };
    std::optional<Located> locate(const std::string& study_id) const;
    const CohortManifest* cohort(const std::string& cohort_id) const;

    std::filesystem::path data_dir_;
    std::vector<CohortManifest> manifests_;
    mutable std::mutex ledger_mutex_;
    QaLedger ledger_;
};

/// Registers the /api routes on `server`.
void bind_routes(httplib::Server& server, ReviewService& service);

/// Blocks serving on host:port.
void serve(ReviewService& service, const std::string& host, int port);

}  // namespace segqa
