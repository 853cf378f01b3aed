#pragma once

#include "canopy/geometry.hpp"
#include "canopy/prompts.hpp"
#include "canopy/raster.hpp"

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace canopy {

// ---------------------------------------------------------------------------
// Run-length masks
// ---------------------------------------------------------------------------

/// Alternating background/foreground run lengths over the row-major pixels,
/// starting with background. A leading zero run means the first pixel is
/// foreground; no other run is zero.
struct RleMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint64_t> runs;

    bool operator==(const RleMask&) const = default;
};

RleMask rle_encode(const BinaryMask& mask);

/// Throws CodecError when the runs do not sum to width * height or contain an
/// interior zero.
BinaryMask rle_decode(const RleMask& rle);

// ---------------------------------------------------------------------------
// Wire protocol (one JSON object per line)
// ---------------------------------------------------------------------------

struct PredictorRequest {
    std::string request_id;
    std::string image_path;
    PromptSet prompts;
    std::map<std::string, std::string> params;

    bool operator==(const PredictorRequest&) const = default;
};

struct Segment {
    RleMask rle;
    double score = 0.0;
    std::optional<int> prompt_index;

    bool operator==(const Segment&) const = default;
};

struct PredictorResponse {
    std::string request_id;
    std::vector<Segment> segments;

    bool operator==(const PredictorResponse&) const = default;
};

/// `{"request_id":..,"image_path":..,"points":[[x,y],..],"boxes":[[xmin,ymin,xmax,ymax],..],"params":{..}}`
/// The tile index and box source scores are not part of the wire format.
std::string serialize_request(const PredictorRequest& request);
PredictorRequest parse_request(const std::string& line);

/// `{"request_id":..,"segments":[{"rle":{"width":..,"height":..,"runs":[..]},"score":..,"prompt_index":..},..]}`
/// An absent prompt index is written as null.
std::string serialize_response(const PredictorResponse& response);

/// Throws ProtocolError on malformed lines and PredictorError when the line is
/// an error report (`{"request_id":..,"error":"..."}`).
PredictorResponse parse_response(const std::string& line);

// ---------------------------------------------------------------------------
// Predictors
// ---------------------------------------------------------------------------

class Predictor {
  public:
    virtual ~Predictor() = default;

    /// Recorded in output provenance.
    virtual std::string identity() const = 0;

    /// Whether `request.image_path` must exist on disk before `predict`.
    virtual bool needs_image_file() const { return true; }

    /// `tile` holds the pixels behind `request.image_path`.
    virtual PredictorResponse predict(const PredictorRequest& request, const RasterImage& tile) = 0;
};

/// Validates the request, runs the predictor and checks the response against
/// the request: matching id, mask dimensions equal to the tile's, scores in
/// [0,1], and a valid prompt index on every segment of a box request.
PredictorResponse segment(Predictor& predictor, const PredictorRequest& request,
                          const RasterImage& tile);

/// As above, loading the tile from `request.image_path`.
PredictorResponse segment(Predictor& predictor, const PredictorRequest& request);

inline constexpr int default_luminance_threshold = 128;

/// Deterministic stand-in for a segmentation model. Foreground is
/// luminance >= threshold. Point prompts return the 8-connected component
/// under the point (each component once); box prompts, which take precedence,
/// return the largest component inside the box. Score is component area over
/// its bbox area.
PredictorResponse oracle_segment(const RasterImage& tile, const PromptSet& prompts,
                                 int luminance_threshold = default_luminance_threshold);

class OraclePredictor final : public Predictor {
  public:
    explicit OraclePredictor(int luminance_threshold = default_luminance_threshold)
        : threshold_(luminance_threshold) {}

    std::string identity() const override;
    bool needs_image_file() const override { return false; }
    PredictorResponse predict(const PredictorRequest& request, const RasterImage& tile) override;

  private:
    int threshold_;
};

inline constexpr std::chrono::seconds default_predictor_timeout{300};

/// External model behind `/bin/sh -c <command>`, speaking the line protocol
/// on stdin/stdout. The process starts on first use and serves requests one
/// at a time.
class SubprocessPredictor final : public Predictor {
  public:
    explicit SubprocessPredictor(std::string command,
                                 std::chrono::milliseconds timeout = default_predictor_timeout);
    ~SubprocessPredictor() override;

    SubprocessPredictor(const SubprocessPredictor&) = delete;
    SubprocessPredictor& operator=(const SubprocessPredictor&) = delete;

    std::string identity() const override { return "subprocess:" + command_; }
    PredictorResponse predict(const PredictorRequest& request, const RasterImage& tile) override;

  private:
    void start();
    void stop();
    std::string read_line(std::chrono::steady_clock::time_point deadline);
    [[noreturn]] void fail(const std::string& what);

    std::string command_;
    std::chrono::milliseconds timeout_;
    int pid_ = -1;
    int stdin_fd_ = -1;
    int stdout_fd_ = -1;
    int stderr_fd_ = -1;
    std::string pending_;
    std::string stderr_tail_;
};

/// "oracle" or "oracle:<threshold>" selects the built-in oracle; anything else
/// is a shell command for SubprocessPredictor.
std::unique_ptr<Predictor>
make_predictor(const std::string& spec,
               std::chrono::milliseconds timeout = default_predictor_timeout);

} // namespace canopy
