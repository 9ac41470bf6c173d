#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fm3d/checkpoint.hpp"
#include "fm3d/generator.hpp"
#include "fm3d/image.hpp"
#include "fm3d/param3d.hpp"
#include "fm3d/recon.hpp"

namespace httplib {
class Server;
}

// Inference on a trained model bundle: editing, reference transfer and
// reanimation, plus the JSON-over-HTTP service that exposes them.
namespace fm3d::service {

using param3d::FaceParams;
using param3d::ParamEdit;

// A training checkpoint holds everything inference needs: G (with its
// encoders), D and the reconstruction network.
struct Bundle {
    generator::Generator G{nullptr};
    recon::ReconModel fr;
    std::string checkpoint_id; // hex digest of the checkpoint bytes
};

Bundle bundle_from_archive(const TensorArchive& a, std::string checkpoint_id);
// IoError when unreadable, VersionError when not a model checkpoint.
Bundle load_bundle(const std::filesystem::path& path);

struct EditResult {
    ImageGrid output;   // G(P, render(params))
    ImageGrid render;   // render(params)
    FaceParams params;  // the edited parameters
};

// Stateless operations on an immutable bundle. Every call is deterministic
// given (bundle, inputs).
class Editor {
public:
    explicit Editor(std::shared_ptr<const Bundle> bundle);

    int resolution() const { return bundle_->fr.resolution; }
    const param3d::ParamDims& dims() const { return bundle_->fr.dims; }
    const Bundle& bundle() const { return *bundle_; }

    FaceParams estimate(const ImageGrid& photo) const;
    ImageGrid render(const FaceParams& p) const;
    // An empty edit reproduces the reconstruction path G(P, render(FR(P))).
    EditResult manipulate(const ImageGrid& photo, const ParamEdit& edit) const;
    // Identity from `photo`; expression, lighting and pose from `reference`.
    EditResult reference(const ImageGrid& photo, const ImageGrid& reference) const;
    // One frame per edit, all from a single estimate of `photo`.
    std::vector<ImageGrid> reanimate(const ImageGrid& photo, const std::vector<ParamEdit>& edits) const;

private:
    ImageGrid generate(const ImageGrid& photo, const ImageGrid& render) const;
    std::shared_ptr<const Bundle> bundle_;
};

// Single worker thread draining a bounded FIFO of jobs.
class JobQueue {
public:
    explicit JobQueue(std::size_t capacity);
    ~JobQueue();
    JobQueue(const JobQueue&) = delete;
    JobQueue& operator=(const JobQueue&) = delete;

    // Returns nullopt when `capacity` jobs are already waiting.
    std::optional<std::future<void>> try_submit(std::function<void()> job);
    std::size_t pending() const; // queued, not yet started
    std::size_t capacity() const { return capacity_; }

private:
    void loop();

    const std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::packaged_task<void()>> jobs_;
    bool stop_ = false;
    std::thread worker_;
};

struct ServerOptions {
    std::size_t queue_depth = 8;
    std::chrono::milliseconds request_timeout{30000};
    std::size_t max_body_bytes = 4u << 20;
    std::optional<std::filesystem::path> ui_dir; // served under /ui when set
    // Test hook run by the worker before every model job.
    std::function<void()> before_job;
};

// HTTP status codes used by the service.
//   400 malformed JSON, missing fields, undecodable or non-square images
//   413 body larger than max_body_bytes, or an image larger than the model
//   422 parameters or edits that violate the parameter contract
//   503 generation queue full
//   504 a queued job did not finish within request_timeout
class Server {
public:
    Server(std::shared_ptr<const Bundle> bundle, ServerOptions options = {});
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    // Binds to `port` (0 picks a free one) and returns the bound port.
    int bind(const std::string& host, int port);
    // Blocks serving requests until stop().
    void listen();
    void stop();

    const Editor& editor() const { return editor_; }
    JobQueue& queue() { return queue_; }

private:
    void routes();

    Editor editor_;
    ServerOptions options_;
    JobQueue queue_;
    std::unique_ptr<httplib::Server> http_;
};

// JSON helpers shared by the service and its clients.
std::vector<double> params_to_flat(const FaceParams& p);
nlohmann::json health_json(const Editor& e);

} // namespace fm3d::service
