#include "fm3d/service.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "fm3d/errors.hpp"
#include "fm3d/seed.hpp"
#include "fm3d/toyworld.hpp"

namespace fm3d::service {
namespace {

std::string hex_digest(std::string_view bytes) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

// An error with a definite HTTP status.
struct HttpError {
    int status;
    std::string message;
};

nlohmann::json parse_body(const httplib::Request& req) {
    auto j = nlohmann::json::parse(req.body, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw HttpError{400, "request body is not valid JSON"};
    if (!j.is_object()) throw HttpError{400, "request body must be a JSON object"};
    return j;
}

const nlohmann::json& field(const nlohmann::json& body, const char* key) {
    const auto it = body.find(key);
    if (it == body.end()) throw HttpError{400, std::string("missing field '") + key + "'"};
    return *it;
}

ImageGrid image_field(const nlohmann::json& body, const char* key, int resolution) {
    const auto& v = field(body, key);
    if (!v.is_string()) throw HttpError{400, std::string("field '") + key + "' must be a base64 PNG string"};
    std::string png;
    try {
        png = base64_decode(v.get<std::string>());
        const auto [w, h] = png_dimensions(png);
        if (w > resolution || h > resolution)
            throw HttpError{413, std::string("image '") + key + "' is " + std::to_string(w) + "x" + std::to_string(h) +
                                     "; the model accepts " + std::to_string(resolution) + "x" +
                                     std::to_string(resolution)};
        if (w != resolution || h != resolution)
            throw HttpError{400, std::string("image '") + key + "' must be " + std::to_string(resolution) + "x" +
                                     std::to_string(resolution)};
        return decode_png(png);
    } catch (const IoError& e) {
        throw HttpError{400, std::string("image '") + key + "': " + e.what()};
    } catch (const ShapeError& e) {
        throw HttpError{400, std::string("image '") + key + "': " + e.what()};
    }
}

std::vector<double> flat_field(const nlohmann::json& body, const char* key) {
    const auto& v = field(body, key);
    if (!v.is_array()) throw HttpError{400, std::string("field '") + key + "' must be an array of numbers"};
    std::vector<double> out;
    for (const auto& x : v) {
        if (!x.is_number()) throw HttpError{400, std::string("field '") + key + "' must be an array of numbers"};
        out.push_back(x.get<double>());
    }
    return out;
}

std::string png_b64(const ImageGrid& img) { return base64_encode(encode_png(img)); }

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

} // namespace

// --- bundle -----------------------------------------------------------------------------------

Bundle bundle_from_archive(const TensorArchive& a, std::string checkpoint_id) {
    if (!a.header.contains("G.meta"))
        throw VersionError("checkpoint holds no conditional generator (expected a training checkpoint)");
    Bundle b;
    b.G = generator::load_models(a).G;
    b.fr = recon::load_recon(a);
    if (b.fr.resolution != b.G->config().resolution)
        throw VersionError("checkpoint generator and reconstruction resolutions differ");
    b.G->eval();
    for (auto& p : b.G->parameters()) p.set_requires_grad(false);
    b.checkpoint_id = std::move(checkpoint_id);
    return b;
}

Bundle load_bundle(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    const auto bytes = ss.str();
    return bundle_from_archive(TensorArchive::deserialize(bytes), hex_digest(bytes));
}

// --- editor -----------------------------------------------------------------------------------

Editor::Editor(std::shared_ptr<const Bundle> bundle) : bundle_(std::move(bundle)) {
    if (!bundle_ || !bundle_->G) throw ConfigError("editor needs a loaded bundle");
}

FaceParams Editor::estimate(const ImageGrid& photo) const { return recon::estimate(bundle_->fr, photo); }

ImageGrid Editor::render(const FaceParams& p) const {
    p.validate();
    if (!(p.dims() == dims())) throw ShapeError("params do not match the model's dimensions");
    return toyworld::render(p, resolution());
}

ImageGrid Editor::generate(const ImageGrid& photo, const ImageGrid& render) const {
    auto G = bundle_->G;
    return generator::synthesize(G, photo, render);
}

EditResult Editor::manipulate(const ImageGrid& photo, const ParamEdit& edit) const {
    const auto p = param3d::edit_params(estimate(photo), edit);
    auto r = render(p);
    return {generate(photo, r), r, p};
}

EditResult Editor::reference(const ImageGrid& photo, const ImageGrid& ref) const {
    const auto id = estimate(photo);
    const auto src = estimate(ref);
    ParamEdit e;
    e.beta = src.beta;
    e.gamma = src.gamma;
    e.delta = src.delta;
    const auto p = param3d::edit_params(id, e);
    auto r = render(p);
    return {generate(photo, r), r, p};
}

std::vector<ImageGrid> Editor::reanimate(const ImageGrid& photo, const std::vector<ParamEdit>& edits) const {
    if (edits.empty()) throw ConfigError("reanimate: the edit sequence is empty");
    const auto base = estimate(photo);
    std::vector<ImageGrid> frames;
    for (const auto& e : edits) frames.push_back(generate(photo, render(param3d::edit_params(base, e))));
    return frames;
}

// --- job queue ---------------------------------------------------------------------------------

JobQueue::JobQueue(std::size_t capacity) : capacity_(capacity), worker_([this] { loop(); }) {}

JobQueue::~JobQueue() {
    {
        std::lock_guard lk(mu_);
        stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
}

std::optional<std::future<void>> JobQueue::try_submit(std::function<void()> job) {
    std::packaged_task<void()> task(std::move(job));
    auto fut = task.get_future();
    {
        std::lock_guard lk(mu_);
        if (jobs_.size() >= capacity_) return std::nullopt;
        jobs_.push_back(std::move(task));
    }
    cv_.notify_one();
    return fut;
}

std::size_t JobQueue::pending() const {
    std::lock_guard lk(mu_);
    return jobs_.size();
}

void JobQueue::loop() {
    for (;;) {
        std::packaged_task<void()> task;
        {
            std::unique_lock lk(mu_);
            cv_.wait(lk, [this] { return stop_ || !jobs_.empty(); });
            if (stop_) return;
            task = std::move(jobs_.front());
            jobs_.pop_front();
        }
        task();
    }
}

// --- HTTP ------------------------------------------------------------------------------------

std::vector<double> params_to_flat(const FaceParams& p) { return param3d::flatten(p); }

nlohmann::json health_json(const Editor& e) {
    return {{"status", "ok"},
            {"checkpoint_id", e.bundle().checkpoint_id},
            {"dims", param3d::to_json(e.dims())},
            {"resolution", e.resolution()},
            {"arch", generator::to_string(e.bundle().G->config().mode)},
            {"delta_max", param3d::kDeltaMax},
            {"coeff_clip", param3d::kCoeffClip}};
}

Server::Server(std::shared_ptr<const Bundle> bundle, ServerOptions options)
    : editor_(std::move(bundle)), options_(std::move(options)), queue_(options_.queue_depth),
      http_(std::make_unique<httplib::Server>()) {
    routes();
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
    if (port == 0) {
        const int p = http_->bind_to_any_port(host);
        if (p < 0) throw IoError("cannot bind " + host);
        return p;
    }
    if (!http_->bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void Server::listen() { http_->listen_after_bind(); }

void Server::stop() {
    if (http_) http_->stop();
}

void Server::routes() {
    auto& s = *http_;
    s.set_payload_max_length(options_.max_body_bytes);
    if (options_.ui_dir && std::filesystem::is_directory(*options_.ui_dir))
        s.set_mount_point("/ui", options_.ui_dir->string());

    // Runs `f` on the generation worker, mapping backpressure and timeouts
    // to 503 / 504.
    auto on_worker = [this](auto f) {
        using R = decltype(f());
        auto result = std::make_shared<std::optional<R>>();
        auto hook = options_.before_job;
        auto fut = queue_.try_submit([result, f, hook] {
            if (hook) hook();
            *result = f();
        });
        if (!fut) throw HttpError{503, "generation queue is full; retry later"};
        if (fut->wait_for(options_.request_timeout) != std::future_status::ready)
            throw HttpError{504, "generation did not finish within " +
                                     std::to_string(options_.request_timeout.count()) + " ms"};
        fut->get(); // rethrows job errors
        return std::move(**result);
    };

    auto handle = [](auto body) {
        return [body](const httplib::Request& req, httplib::Response& res) {
            try {
                body(req, res);
            } catch (const HttpError& e) {
                reply(res, e.status, {{"error", e.message}});
            } catch (const nlohmann::json::exception& e) {
                reply(res, 400, {{"error", std::string("malformed payload: ") + e.what()}});
            } catch (const ConfigError& e) {
                reply(res, 422, {{"error", e.what()}});
            } catch (const ShapeError& e) {
                reply(res, 422, {{"error", e.what()}});
            } catch (const std::exception& e) {
                reply(res, 500, {{"error", e.what()}});
            }
        };
    };

    s.Get("/health", handle([this](const httplib::Request&, httplib::Response& res) {
              reply(res, 200, health_json(editor_));
          }));

    s.Post("/estimate", handle([this, on_worker](const httplib::Request& req, httplib::Response& res) {
               const auto body = parse_body(req);
               const auto photo = image_field(body, "photo", editor_.resolution());
               const auto p = on_worker([this, photo] { return editor_.estimate(photo); });
               reply(res, 200, {{"params", params_to_flat(p)}});
           }));

    s.Post("/render", handle([this](const httplib::Request& req, httplib::Response& res) {
               const auto body = parse_body(req);
               const auto flat = flat_field(body, "params");
               const auto p = param3d::unflatten(flat, editor_.dims());
               reply(res, 200, {{"render", png_b64(editor_.render(p))}});
           }));

    s.Post("/manipulate", handle([this, on_worker](const httplib::Request& req, httplib::Response& res) {
               const auto body = parse_body(req);
               const auto photo = image_field(body, "photo", editor_.resolution());
               const auto& ej = field(body, "edit");
               if (!ej.is_object()) throw HttpError{400, "field 'edit' must be an object"};
               const auto edit = param3d::edit_from_json(ej);
               const auto r = on_worker([this, photo, edit] { return editor_.manipulate(photo, edit); });
               reply(res, 200,
                     {{"output", png_b64(r.output)}, {"render", png_b64(r.render)}, {"params", params_to_flat(r.params)}});
           }));

    s.Post("/reference", handle([this, on_worker](const httplib::Request& req, httplib::Response& res) {
               const auto body = parse_body(req);
               const auto photo = image_field(body, "photo", editor_.resolution());
               const auto ref = image_field(body, "reference", editor_.resolution());
               const auto r = on_worker([this, photo, ref] { return editor_.reference(photo, ref); });
               reply(res, 200, {{"output", png_b64(r.output)}, {"params_used", params_to_flat(r.params)}});
           }));
}

} // namespace fm3d::service
