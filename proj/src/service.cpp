#include "segqa/service.hpp"

#include <algorithm>
#include <charconv>

#include "httplib.h"
#include "json.hpp"
#include "segqa/nifti.hpp"
#include "segqa/round.hpp"

namespace segqa {

namespace {

using json = nlohmann::json;

HttpResponse ok(const json& j) { return {200, j.dump()}; }

HttpResponse fail(int status, const std::string& message) {
    return {status, json{{"error", message}}.dump()};
}

std::string param(const QueryParams& q, const std::string& key, const std::string& fallback = {}) {
    const auto it = q.find(key);
    return it == q.end() ? fallback : it->second;
}

std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::size_t used = 0;
    try {
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::optional<std::size_t> parse_index(const std::string& s) {
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || end != s.data() + s.size()) return std::nullopt;
    return v;
}

json breakdown_json(const QualityBreakdown& b) {
    return {{"excellent", b.excellent}, {"usable", b.usable}, {"fail", b.fail}, {"graded", b.graded}};
}

}  // namespace

std::string slice_to_json(const SlicePayload& p) {
    json overlay = json::array();
    for (const auto& r : p.overlay) overlay.push_back({r.code, r.run});
    return json{{"width", p.width},   {"height", p.height}, {"pixels", p.pixels},
                {"overlay", overlay}, {"axis", to_string(p.axis)}, {"index", p.index}}
        .dump();
}

SlicePayload slice_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        SlicePayload p;
        p.width = j.at("width").get<std::size_t>();
        p.height = j.at("height").get<std::size_t>();
        p.pixels = j.at("pixels").get<std::string>();
        for (const auto& r : j.at("overlay"))
            p.overlay.push_back({r.at(0).get<std::uint16_t>(), r.at(1).get<std::uint32_t>()});
        p.axis = axis_from_string(j.at("axis").get<std::string>());
        p.index = j.at("index").get<std::size_t>();
        return p;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed slice payload: ") + e.what());
    }
}

ReviewService::ReviewService(const std::filesystem::path& data_dir) : data_dir_(data_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(data_dir)) throw IoError("data directory not found: " + data_dir.string());
    std::vector<fs::path> files;
    if (fs::is_directory(data_dir / "manifests"))
        for (const auto& e : fs::directory_iterator(data_dir / "manifests"))
            if (e.path().extension() == ".json") files.push_back(e.path());
    for (const auto& e : fs::directory_iterator(data_dir))
        if (e.is_directory() && fs::exists(e.path() / "manifest.json"))
            files.push_back(e.path() / "manifest.json");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) manifests_.push_back(load_manifest(f));
    ledger_ = QaLedger::open(data_dir / "qa_ledger.ndjson");
}

std::filesystem::path ReviewService::prediction_path(const std::string& version,
                                                     const std::string& study_id) const {
    return data_dir_ / "predictions" / version / study_id / "label.nii";
}

QaLedger ReviewService::ledger_snapshot() const {
    std::lock_guard lock(ledger_mutex_);
    return ledger_;
}

std::optional<ReviewService::Located> ReviewService::locate(const std::string& study_id) const {
    for (const auto& m : manifests_)
        if (const auto* e = m.find(study_id)) return Located{&m, e};
    return std::nullopt;
}

const CohortManifest* ReviewService::cohort(const std::string& cohort_id) const {
    for (const auto& m : manifests_)
        if (m.cohort_id == cohort_id) return &m;
    return nullptr;
}

HttpResponse ReviewService::queue(const QueryParams& q) {
    const std::string version = param(q, "version");
    if (version.empty()) return fail(409, "missing query parameter 'version'");
    const std::string cohort_id = param(q, "cohort");
    std::vector<const CohortManifest*> selected;
    if (cohort_id.empty()) {
        for (const auto& m : manifests_) selected.push_back(&m);
    } else if (const auto* m = cohort(cohort_id)) {
        selected.push_back(m);
    } else {
        return fail(404, "unknown cohort '" + cohort_id + "'");
    }
    const auto graded = ledger_snapshot().effective(version);
    json ungraded = json::array(), done = json::array();
    for (const auto* m : selected)
        for (const auto& e : m->entries) {
            const auto it = graded.find(e.study_id);
            if (it == graded.end())
                ungraded.push_back(e.study_id);
            else
                done.push_back({{"study_id", e.study_id}, {"grade", to_int(it->second)}});
        }
    return ok({{"version", version}, {"ungraded", ungraded}, {"graded", done}});
}

HttpResponse ReviewService::study(const std::string& study_id) {
    const auto loc = locate(study_id);
    if (!loc) return fail(404, "unknown study '" + study_id + "'");
    VoxelVolume image;
    try {
        image = nifti::load_volume(loc->manifest->resolve(loc->entry->image));
    } catch (const Error& e) {
        return fail(500, e.what());
    }
    const Shape3 s = image.shape();
    json versions = json::array();
    if (std::filesystem::is_directory(data_dir_ / "predictions"))
        for (const auto& v : std::filesystem::directory_iterator(data_dir_ / "predictions"))
            if (std::filesystem::exists(v.path() / study_id / "label.nii"))
                versions.push_back(v.path().filename().string());
    std::sort(versions.begin(), versions.end());
    json grades = json::object();
    const QaLedger ledger = ledger_snapshot();
    for (const auto& v : ledger.versions()) {
        const auto eff = ledger.effective(v);
        if (const auto it = eff.find(study_id); it != eff.end()) grades[v] = to_int(it->second);
    }
    const Vec3 sp = image.spacing();
    return ok({{"study_id", study_id},
               {"cohort_id", loc->manifest->cohort_id},
               {"role", to_string(loc->entry->role)},
               {"shape", {s.nx, s.ny, s.nz}},
               {"spacing", {sp.x, sp.y, sp.z}},
               {"extents",
                {{"axial", s.nz}, {"coronal", s.ny}, {"sagittal", s.nx}}},
               {"has_label", loc->entry->label.has_value()},
               {"versions", versions},
               {"grades", grades}});
}

HttpResponse ReviewService::slice(const std::string& study_id, const std::string& axis_text,
                                  const std::string& index_text, const QueryParams& q) {
    const auto loc = locate(study_id);
    if (!loc) return fail(404, "unknown study '" + study_id + "'");
    Axis axis;
    try {
        axis = axis_from_string(axis_text);
    } catch (const Error& e) {
        return fail(409, e.what());
    }
    const auto index = parse_index(index_text);
    if (!index) return fail(409, "slice index '" + index_text + "' is not a non-negative integer");
    WindowSpec spec = window_presets::kSoftTissue;
    for (auto [key, field] : {std::pair{"window", &spec.window}, std::pair{"level", &spec.level}}) {
        const std::string raw = param(q, key);
        if (raw.empty()) continue;
        const auto v = parse_double(raw);
        if (!v) return fail(409, std::string("query parameter '") + key + "' is not a number");
        *field = *v;
    }
    try {
        spec.validate();
        const VoxelVolume image = nifti::load_volume(loc->manifest->resolve(loc->entry->image));
        std::optional<LabelMap> label;
        const std::string version = param(q, "version");
        if (!version.empty()) {
            const auto path = prediction_path(version, study_id);
            if (!std::filesystem::exists(path))
                return fail(404, "no prediction of version '" + version + "' for '" + study_id + "'");
            label = nifti::load_labels(path);
        } else if (loc->entry->label) {
            label = nifti::load_labels(loc->manifest->resolve(*loc->entry->label));
        }
        return {200, slice_to_json(render_slice(image, label, axis, *index, spec))};
    } catch (const InvalidArgument& e) {
        return fail(409, e.what());
    } catch (const BoundsError& e) {
        return fail(409, e.what());
    } catch (const ShapeError& e) {
        return fail(409, e.what());
    } catch (const Error& e) {
        return fail(500, e.what());
    }
}

HttpResponse ReviewService::grade(const std::string& study_id, const std::string& body) {
    if (!locate(study_id)) return fail(404, "unknown study '" + study_id + "'");
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception&) {
        return fail(409, "grade submission is not valid JSON");
    }
    if (!j.is_object() || !j.contains("grade") || !j.contains("rater_id") ||
        !j.contains("algorithm_version") || !j["rater_id"].is_string() ||
        !j["algorithm_version"].is_string())
        return fail(409, "grade submission needs rater_id, grade and algorithm_version");
    if (j.contains("study_id") && j["study_id"] != study_id)
        return fail(409, "study_id in body does not match the URL");
    if (!j["grade"].is_number_integer()) return fail(400, "grade must be 0, 1 or 2");
    QaRecord rec;
    try {
        rec.grade = grade_from_int(j["grade"].get<long long>());
    } catch (const ValidationError& e) {
        return fail(400, e.what());
    }
    rec.study_id = study_id;
    rec.rater_id = j["rater_id"].get<std::string>();
    rec.algorithm_version = j["algorithm_version"].get<std::string>();
    if (rec.algorithm_version.empty()) return fail(409, "algorithm_version must not be empty");
    try {
        std::lock_guard lock(ledger_mutex_);
        rec.timestamp = next_timestamp(ledger_);
        ledger_.append(rec);
    } catch (const ValidationError& e) {
        return fail(400, e.what());
    } catch (const Error& e) {
        return fail(500, e.what());
    }
    return ok(json::parse(record_to_json(rec)));
}

HttpResponse ReviewService::failure_rates(const QueryParams& q) {
    const std::string cohort_id = param(q, "cohort");
    if (cohort_id.empty()) return fail(409, "missing query parameter 'cohort'");
    const auto* m = cohort(cohort_id);
    if (!m) return fail(404, "unknown cohort '" + cohort_id + "'");
    const QaLedger ledger = ledger_snapshot();
    json rates = json::object();
    for (const auto& v : ledger.versions()) {
        if (cohort_grades(ledger, *m, v).empty()) continue;
        const auto b = segqa::quality_breakdown(ledger, *m, v);
        rates[v] = json{{"failure_rate", b.fail}, {"graded", b.graded}};
    }
    return ok({{"cohort", cohort_id}, {"versions", rates}});
}

HttpResponse ReviewService::quality_breakdown(const QueryParams& q) {
    const std::string cohort_id = param(q, "cohort");
    const std::string version = param(q, "version");
    if (cohort_id.empty() || version.empty())
        return fail(409, "query parameters 'cohort' and 'version' are required");
    const auto* m = cohort(cohort_id);
    if (!m) return fail(404, "unknown cohort '" + cohort_id + "'");
    try {
        const auto b = segqa::quality_breakdown(ledger_snapshot(), *m, version);
        json out = breakdown_json(b);
        out["cohort"] = cohort_id;
        out["version"] = version;
        return ok(out);
    } catch (const EmptyInputError& e) {
        return fail(404, e.what());
    }
}

void bind_routes(httplib::Server& server, ReviewService& service) {
    auto send = [](httplib::Response& res, const HttpResponse& r) {
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    auto params = [](const httplib::Request& req) {
        QueryParams q;
        for (const auto& [k, v] : req.params) q[k] = v;
        return q;
    };
    server.Get("/api/queue", [&, send, params](const httplib::Request& req, httplib::Response& res) {
        send(res, service.queue(params(req)));
    });
    server.Get(R"(/api/studies/([^/]+))", [&, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service.study(req.matches[1]));
    });
    server.Get(R"(/api/studies/([^/]+)/slices/([^/]+)/([^/]+))",
               [&, send, params](const httplib::Request& req, httplib::Response& res) {
                   send(res, service.slice(req.matches[1], req.matches[2], req.matches[3],
                                           params(req)));
               });
    server.Post(R"(/api/studies/([^/]+)/grade)",
                [&, send](const httplib::Request& req, httplib::Response& res) {
                    send(res, service.grade(req.matches[1], req.body));
                });
    server.Get("/api/reports/failure-rates",
               [&, send, params](const httplib::Request& req, httplib::Response& res) {
                   send(res, service.failure_rates(params(req)));
               });
    server.Get("/api/reports/quality-breakdown",
               [&, send, params](const httplib::Request& req, httplib::Response& res) {
                   send(res, service.quality_breakdown(params(req)));
               });
}

void serve(ReviewService& service, const std::string& host, int port) {
    httplib::Server server;
    bind_routes(server, service);
    if (!server.listen(host, port))
        throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace segqa
