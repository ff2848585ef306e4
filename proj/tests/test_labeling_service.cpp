#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "defectloop/annotation_json.hpp"
#include "defectloop/labeling_service.hpp"
#include "defectloop/reference_backend.hpp"
#include "defectloop/synthetic.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

using namespace defectloop;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

constexpr auto kPoly = DefectClass::PolycrystallineDefect;

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::Io;
}

LabelingBatch batch_of(const std::string& id, std::vector<ImageId> images) {
  LabelingBatch b;
  b.batch_id = id;
  b.image_ids = std::move(images);
  return b;
}

AnnotationSet mask_set(const ImageId& id, int offset = 0) {
  AnnotationSet s;
  s.image_id = id;
  s.source = AnnotationSource::labeler("anyone");
  MaskGrid m = MaskGrid::Constant(6, 6, false);
  m.block(1 + offset, 1, 2, 3).setConstant(true);
  s.masks.push_back(MaskAnnotation::from_grid(kPoly, m));
  return s;
}

struct FakeClock {
  std::shared_ptr<std::atomic<long>> seconds = std::make_shared<std::atomic<long>>(0);
  [[nodiscard]] SteadyClock fn() const {
    auto s = seconds;
    return [s] { return std::chrono::steady_clock::time_point(std::chrono::seconds(s->load())); };
  }
};

}  // namespace

TEST_CASE("single image is handed out once") {
  LabelingService svc;
  svc.register_labeler("ann");
  svc.register_labeler("ann");
  CHECK(svc.is_registered("ann"));
  CHECK_FALSE(svc.next_task("ann").has_value());
  svc.publish(batch_of("b1", {"img1"}));
  const auto t = svc.next_task("ann");
  REQUIRE(t);
  CHECK(t->image_id == "img1");
  CHECK(t->batch_id == "b1");
  CHECK(t->image_uri == "/images/img1.png");
  CHECK_FALSE(t->pre_annotation.has_value());
  CHECK(t->class_catalog.size() == 3);
  const auto j = envelope_to_json(*t);
  CHECK(j["pre_annotation"].is_null());
  CHECK(j["task_id"] == t->task_id);
  svc.register_labeler("bob");
  CHECK_FALSE(svc.next_task("bob").has_value());
  CHECK_FALSE(svc.next_task("ann").has_value());
  CHECK(code_of([&] { svc.publish(batch_of("b1", {"x"})); }) == Errc::InvalidArgument);
  CHECK(code_of([&] { svc.register_labeler(""); }) == Errc::InvalidArgument);
}

TEST_CASE("unknown labelers and tasks") {
  LabelingService svc;
  CHECK(code_of([&] { (void)svc.next_task("ghost"); }) == Errc::UnknownLabeler);
  CHECK(code_of([&] { svc.submit("t999999", mask_set("x"), std::nullopt); }) == Errc::UnknownTask);
  CHECK(code_of([&] { (void)svc.submitted_json("t999999"); }) == Errc::UnknownTask);
  CHECK(code_of([&] { (void)svc.consensus_report("nope"); }) == Errc::NotFound);
}

TEST_CASE("pre-annotations travel with the envelope") {
  LabelingService svc;
  svc.register_labeler("ann");
  auto batch = batch_of("mal", {"a", "b"});
  AnnotationSet pred = mask_set("a");
  pred.source = AnnotationSource::model("m1");
  batch = attach_preannotations(batch, {{"a", pred}});
  svc.publish(batch);
  const auto first = svc.next_task("ann");
  const auto second = svc.next_task("ann");
  REQUIRE(first);
  REQUIRE(second);
  CHECK(first->image_id == "a");
  REQUIRE(first->pre_annotation);
  CHECK(first->pre_annotation->masks.size() == 1);
  CHECK(envelope_to_json(*first)["pre_annotation"]["image_id"] == "a");
  CHECK_FALSE(second->pre_annotation.has_value());
}

TEST_CASE("submission validation and byte-identical storage") {
  LabelingService svc;
  svc.register_labeler("ann");
  svc.publish(batch_of("b", {"img"}));
  const auto t = svc.next_task("ann");
  REQUIRE(t);
  CHECK(code_of([&] { (void)svc.submitted_json(t->task_id); }) == Errc::NotFound);

  CHECK(code_of([&] { svc.submit(t->task_id, mask_set("other"), std::nullopt); }) == Errc::ValidationFailed);

  AnnotationSet good = mask_set("img");
  good.source = AnnotationSource::labeler("ann");
  good.elapsed_labeling_seconds = 12.5;
  Json bad = good;
  bad["masks"][0]["rle"] = {1, 2};
  CHECK(code_of([&] { svc.submit_json(t->task_id, bad, 12.5); }) == Errc::ValidationFailed);
  CHECK(code_of([&] { svc.submit_json(t->task_id, Json::array(), 12.5); }) == Errc::ValidationFailed);

  const Json sent = good;
  svc.submit_json(t->task_id, sent, 12.5);
  CHECK(svc.submitted_json(t->task_id) == sent.dump());
  CHECK(annotation_set_from_json(Json::parse(svc.submitted_json(t->task_id))) == good);
  CHECK(code_of([&] { svc.submit_json(t->task_id, sent, 12.5); }) == Errc::LeaseExpired);
}

TEST_CASE("submissions are normalised to labeler drafts") {
  LabelingService svc;
  svc.register_labeler("ann");
  svc.publish(batch_of("b", {"img"}));
  const auto t = svc.next_task("ann");
  AnnotationSet s = mask_set("img");
  s.source = AnnotationSource::model("sneaky");
  s.boxes.push_back({DefectClass::CenterDefect, Box{0, 0, 2, 2}, 0.9});
  s.review_state = ReviewState::ExpertApproved;
  svc.submit(t->task_id, s, 3.0);
  const auto stored = annotation_set_from_json(Json::parse(svc.submitted_json(t->task_id)));
  CHECK(stored.source == AnnotationSource::labeler("ann"));
  CHECK(stored.review_state == ReviewState::Draft);
  CHECK_FALSE(stored.boxes[0].score.has_value());
  CHECK(stored.elapsed_labeling_seconds == 3.0);
}

TEST_CASE("leases expire") {
  FakeClock clock;
  LabelingServiceConfig cfg;
  cfg.lease = 60s;
  LabelingService svc(cfg, clock.fn());
  svc.register_labeler("ann");
  svc.register_labeler("bob");
  svc.publish(batch_of("b", {"img"}));
  const auto t = svc.next_task("ann");
  REQUIRE(t);
  CHECK_FALSE(svc.next_task("bob").has_value());
  *clock.seconds = 61;
  CHECK(code_of([&] { svc.submit(t->task_id, mask_set("img"), 5.0); }) == Errc::LeaseExpired);
  const auto again = svc.next_task("bob");
  REQUIRE(again);
  CHECK(again->image_id == "img");
  CHECK(again->task_id != t->task_id);
  CHECK(code_of([&] { svc.submit(t->task_id, mask_set("img"), 5.0); }) == Errc::LeaseExpired);
  svc.submit(again->task_id, mask_set("img"), 5.0);
  CHECK(svc.batch_complete("b"));
}

TEST_CASE("expired leases are reclaimed by the next poll") {
  FakeClock clock;
  LabelingServiceConfig cfg;
  cfg.lease = 10s;
  LabelingService svc(cfg, clock.fn());
  svc.register_labeler("ann");
  svc.register_labeler("bob");
  svc.publish(batch_of("b", {"img"}));
  REQUIRE(svc.next_task("ann"));
  *clock.seconds = 9;
  CHECK_FALSE(svc.next_task("bob").has_value());
  *clock.seconds = 10;
  CHECK(svc.next_task("bob").has_value());
}

TEST_CASE("redundant tasks reach distinct labelers and trigger consensus") {
  LabelingServiceConfig cfg;
  cfg.redundancy = 3;
  LabelingService svc(cfg);
  for (const char* who : {"ann", "bob", "cy"}) svc.register_labeler(who);
  svc.publish(batch_of("b", {"p", "q"}));

  std::map<std::string, std::set<ImageId>> seen;
  std::vector<std::pair<std::string, TaskEnvelope>> leased;
  for (const char* who : {"ann", "bob", "cy"}) {
    while (auto t = svc.next_task(who)) {
      CHECK(seen[who].insert(t->image_id).second);
      leased.emplace_back(who, *t);
    }
  }
  CHECK(leased.size() == 6);
  for (const auto& [who, imgs] : seen) CHECK(imgs.size() == 2);

  CHECK_FALSE(svc.batch_complete("b"));
  for (const auto& [who, t] : leased) {
    // cy disagrees on p by a shifted mask
    const int offset = (who == "cy" && t.image_id == "p") ? 2 : 0;
    svc.submit(t.task_id, mask_set(t.image_id, offset), 10.0);
  }
  CHECK(svc.batch_complete("b"));
  const auto report = svc.consensus_report("b");
  CHECK(report["status"] == "AwaitingExpert");
  CHECK(report.dump().find("\"p\"") != std::string::npos);
  std::atomic<bool> stop{false};
  const auto all = svc.wait_for("b", [&] { return stop.load(); }, 5ms);
  REQUIRE(all);
  CHECK(all->at("p").size() == 3);
  const auto merged = merge_consensus(all->at("p"));
  CHECK(merged.merged.masks[0].to_grid().count() == mask_set("p").masks[0].to_grid().count());
}

TEST_CASE("concurrent pollers never share a lease") {
  LabelingService svc;
  constexpr int kImages = 400, kThreads = 8;
  std::vector<ImageId> ids;
  for (int i = 0; i < kImages; ++i) ids.push_back("img" + std::to_string(i));
  for (int t = 0; t < kThreads; ++t) svc.register_labeler("l" + std::to_string(t));
  svc.publish(batch_of("big", ids));

  std::mutex m;
  std::vector<ImageId> handed;
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      const std::string who = "l" + std::to_string(t);
      while (auto task = svc.next_task(who)) {
        svc.submit(task->task_id, mask_set(task->image_id), 1.0);
        std::lock_guard lock(m);
        handed.push_back(task->image_id);
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(handed.size() == kImages);
  CHECK(std::set<ImageId>(handed.begin(), handed.end()).size() == kImages);
  CHECK(svc.batch_complete("big"));
}

TEST_CASE("wait_for honours its stop predicate") {
  LabelingService svc;
  svc.publish(batch_of("b", {"img"}));
  std::atomic<bool> stop{false};
  std::thread stopper([&] {
    std::this_thread::sleep_for(30ms);
    stop = true;
    svc.notify_all();
  });
  CHECK_FALSE(svc.wait_for("b", [&] { return stop.load(); }, 10ms).has_value());
  stopper.join();
  CHECK(code_of([&] { (void)svc.wait_for("zz", [] { return true; }); }) == Errc::NotFound);
}

TEST_CASE("service desk publishes with a prefix and aborts on stop") {
  LabelingService svc;
  svc.register_labeler("ann");
  std::atomic<bool> stop{false};
  ServiceDesk desk(svc, [&] { return stop.load(); }, "run1-");
  std::thread labeler([&] {
    for (int tries = 0; tries < 200; ++tries) {
      if (auto t = svc.next_task("ann")) {
        CHECK(t->batch_id == "run1-batch-001");
        svc.submit(t->task_id, mask_set(t->image_id), 2.0);
        return;
      }
      std::this_thread::sleep_for(5ms);
    }
  });
  const auto out = desk.label(batch_of("batch-001", {"img"}));
  labeler.join();
  REQUIRE(out.at("img").size() == 1);
  CHECK(out.at("img")[0].source == AnnotationSource::labeler("ann"));

  stop = true;
  CHECK(code_of([&] { (void)desk.label(batch_of("batch-002", {"img2"})); }) == Errc::Aborted);
}

namespace {

struct SyntheticRun {
  static constexpr int kRes = 48;
  SyntheticCorpus corpus = make_corpus(6, 99);
  ReferenceBackend backend;
  LabelingService service;
  PipelineController controller{backend, service, [this](const ImageId& id) {
                                  return render_scene(corpus.scenes.at(id), kRes);
                                }};
  std::atomic<bool> labeling{true};
  std::thread labeler;
  fs::path dir = fs::temp_directory_path() / ("defectloop_ctl_" + std::to_string(::getpid()));

  SyntheticRun() {
    fs::remove_all(dir);
    service.register_labeler("ann");
  }
  void start_labeler() {
    labeler = std::thread([this] {
      while (labeling) {
        if (auto t = service.next_task("ann")) {
          auto truth = scene_labels(corpus.scenes.at(t->image_id), kRes, t->image_id, AnnotationSource::labeler("ann"));
          service.submit(t->task_id, truth, 4.0);
        } else {
          std::this_thread::sleep_for(2ms);
        }
      }
    });
  }
  RunRequest request(bool step_mode = false) const {
    RunRequest r;
    r.config.batch_size = 2;
    r.config.resolution = kRes;
    r.config.baseline_threshold = 0.5;
    r.config.final_threshold = 0.6;
    r.config.max_batches = 6;
    r.config.seed = 4;
    r.config.state_dir = dir;
    r.image_ids = corpus.ids;
    r.step_mode = step_mode;
    return r;
  }
  ~SyntheticRun() {
    labeling = false;
    if (labeler.joinable()) labeler.join();
    fs::remove_all(dir);
  }
};

}  // namespace

TEST_CASE("controller without a run") {
  SyntheticRun run;
  CHECK(code_of([&] { (void)run.controller.status(); }) == Errc::NoActiveRun);
  CHECK(code_of([&] { run.controller.advance(); }) == Errc::NoActiveRun);
  CHECK(code_of([&] { (void)run.controller.abort(); }) == Errc::NoActiveRun);
  auto bad = run.request();
  bad.image_ids = {"only"};
  CHECK(code_of([&] { run.controller.start(bad); }) == Errc::TooFewImages);
  CHECK_FALSE(run.controller.running());
}

TEST_CASE("controller runs a small synthetic loop to completion") {
  SyntheticRun run;
  run.start_labeler();
  run.controller.start(run.request());
  CHECK(code_of([&] { run.controller.start(run.request()); }) == Errc::AlreadyRunning);
  run.controller.join();
  const auto st = run.controller.status();
  INFO(st.dump());
  CHECK(st["running"] == false);
  CHECK_FALSE(st.contains("error"));
  CHECK(st["phase"] == "Done");
  CHECK(fs::exists(run.dir / "pipeline_state.json"));
  CHECK(fs::exists(run.dir / "consensus"));
  std::ifstream in(run.dir / "pipeline_state.json");
  CHECK(nlohmann::json::parse(in)["phase"] == "Done");
  CHECK(run.service.batch_complete("run1-test-001"));
}

TEST_CASE("aborting a step-mode run persists it as incomplete") {
  SyntheticRun run;
  run.start_labeler();
  run.controller.start(run.request(true));
  CHECK(run.controller.running());
  run.controller.advance();
  for (int i = 0; i < 2000; ++i) {
    if (run.controller.status()["batches_processed"] == 1) break;
    std::this_thread::sleep_for(5ms);
  }
  const auto st = run.controller.abort();
  INFO(st.dump());
  CHECK(st["running"] == false);
  CHECK(st["incomplete"] == true);
  CHECK(st["batches_processed"] == 1);
  std::ifstream in(run.dir / "pipeline_state.json");
  const auto disk = nlohmann::json::parse(in);
  CHECK(disk["incomplete"] == true);
  CHECK(code_of([&] { run.controller.advance(); }) == Errc::NoActiveRun);

  // a fresh run may start afterwards, with its own batch prefix
  run.controller.start(run.request());
  run.controller.join();
  CHECK(run.service.batch_complete("run2-test-001"));
}
