#include "fbeval/fbeval.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "fbeval/error.hpp"
#include "fbeval/pipeline.hpp"
#include "fbeval/stats.hpp"

struct fbe_pipeline {
    fbeval::Pipeline pipeline;
    std::string run_dir;
};

namespace {

thread_local std::string last_error;

fbe_status status_of(fbeval::ErrorKind kind) {
    switch (kind) {
        case fbeval::ErrorKind::config: return FBE_ERR_CONFIG;
        case fbeval::ErrorKind::judge_format: return FBE_ERR_JUDGE_FORMAT;
        case fbeval::ErrorKind::invalid_argument:
        case fbeval::ErrorKind::ingest:
        case fbeval::ErrorKind::pipeline:
        case fbeval::ErrorKind::judge_transport: return FBE_ERR_PIPELINE;
    }
    return FBE_ERR_INTERNAL;
}

// Runs fn, translating exceptions into status codes and the thread's last error.
template <typename Fn>
fbe_status guarded(Fn&& fn) {
    try {
        fn();
        last_error.clear();
        return FBE_OK;
    } catch (const fbeval::Error& e) {
        last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception& e) {
        last_error = e.what();
        return FBE_ERR_INTERNAL;
    } catch (...) {
        last_error = "unknown error";
        return FBE_ERR_INTERNAL;
    }
}

fbe_status misuse(const char* what) {
    last_error = what;
    return FBE_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* fbe_version(void) { return "0.1.0"; }

const char* fbe_last_error(void) { return last_error.c_str(); }

fbe_status fbe_pipeline_create(const char* config_path, const char* const* overrides, size_t n_overrides,
                               fbe_pipeline** out) {
    if (!config_path || !out || (n_overrides && !overrides)) return misuse("fbe_pipeline_create: null argument");
    *out = nullptr;
    return guarded([&] {
        std::vector<std::string> list;
        for (size_t i = 0; i < n_overrides; ++i) {
            if (!overrides[i]) throw fbeval::ConfigError("override " + std::to_string(i) + " is null");
            list.emplace_back(overrides[i]);
        }
        fbeval::Pipeline p(fbeval::load_config(config_path, list));
        const std::string dir = p.run_dir().string();
        *out = new fbe_pipeline{std::move(p), dir};
    });
}

void fbe_pipeline_destroy(fbe_pipeline* pipeline) { delete pipeline; }

fbe_status fbe_pipeline_run(fbe_pipeline* pipeline, const char* command) {
    if (!pipeline || !command) return misuse("fbe_pipeline_run: null argument");
    return guarded([&] { pipeline->pipeline.run(command); });
}

const char* fbe_pipeline_run_dir(const fbe_pipeline* pipeline) { return pipeline ? pipeline->run_dir.c_str() : ""; }

const char* fbe_pipeline_config_hash(const fbe_pipeline* pipeline) {
    return pipeline ? pipeline->pipeline.config_hash().c_str() : "";
}

fbe_status fbe_render_report(const char* run_dir, fbe_format format, char** out) {
    if (!run_dir || !out) return misuse("fbe_render_report: null argument");
    if (format < FBE_FORMAT_JSON || format > FBE_FORMAT_MARKDOWN) return misuse("fbe_render_report: unknown format");
    *out = nullptr;
    return guarded([&] {
        const auto report = fbeval::render_run_dir(run_dir);
        const auto fmt = format == FBE_FORMAT_JSON  ? fbeval::ReportFormat::json
                         : format == FBE_FORMAT_CSV ? fbeval::ReportFormat::csv
                                                    : fbeval::ReportFormat::markdown;
        const std::string text = fbeval::render_report(report, fmt);
        char* buf = static_cast<char*>(std::malloc(text.size() + 1));
        if (!buf) throw std::bad_alloc();
        std::memcpy(buf, text.c_str(), text.size() + 1);
        *out = buf;
    });
}

void fbe_string_free(char* s) { std::free(s); }

double fbe_pabak(double observed_agreement) { return fbeval::stats::pabak(observed_agreement); }

fbe_status fbe_cohen_kappa(const uint64_t* table, size_t k, double* kappa, int* degenerate) {
    if (!table || !kappa || k == 0) return misuse("fbe_cohen_kappa: null argument or empty table");
    return guarded([&] {
        fbeval::stats::ContingencyTable t(k, k);
        for (size_t r = 0; r < k; ++r) {
            for (size_t c = 0; c < k; ++c) t.at(r, c) = table[r * k + c];
        }
        const auto res = fbeval::stats::cohen_kappa(t);
        *kappa = res.kappa;
        if (degenerate) *degenerate = res.degenerate ? 1 : 0;
    });
}

fbe_status fbe_fisher_exact(uint64_t a, uint64_t b, uint64_t c, uint64_t d, double* p) {
    if (!p) return misuse("fbe_fisher_exact: null argument");
    return guarded([&] { *p = fbeval::stats::fisher_exact_two_sided({{a, b}, {c, d}}); });
}

fbe_status fbe_mann_whitney(const double* first, size_t n1, const double* second, size_t n2, double* u, double* p,
                            int* exact) {
    if ((n1 && !first) || (n2 && !second) || !u || !p) return misuse("fbe_mann_whitney: null argument");
    return guarded([&] {
        const auto res = fbeval::stats::mann_whitney_u({first, n1}, {second, n2});
        *u = res.u;
        *p = res.p;
        if (exact) *exact = res.exact ? 1 : 0;
    });
}

int fbe_success_indicator(const char* validity, const char* action) {
    if (!validity || !action) return -1;
    try {
        return fbeval::success_indicator(fbeval::parse_validity(validity), fbeval::parse_action(action)) ? 1 : 0;
    } catch (const fbeval::Error&) {
        return -1;
    }
}

}  // extern "C"
