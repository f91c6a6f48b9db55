#include "aerolabel/annotations.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "aerolabel/coco.hpp"
#include "aerolabel/yolo.hpp"
#include "support/testutil.hpp"

using namespace aerolabel;

namespace {

const char* kMinimalCoco = R"({
  "images": [{"id": 1, "file_name": "a.jpg", "width": 200, "height": 100}],
  "annotations": [{"id": 1, "image_id": 1, "category_id": 7, "bbox": [10, 20, 30, 40]}],
  "categories": [{"id": 7, "name": "vehicle"}]
})";

}  // namespace

TEST(Coco, ParseMinimalDocument) {
  const AnnotatedDataset ds = parse_coco(kMinimalCoco);
  ASSERT_EQ(ds.images.size(), 1u);
  ASSERT_EQ(ds.annotations.size(), 1u);
  ASSERT_EQ(ds.classes.size(), 1u);
  EXPECT_EQ(ds.images[0].file_name, "a.jpg");
  EXPECT_EQ(ds.classes[0].name, "vehicle");
  // COCO (x,y,w,h) becomes corner form.
  EXPECT_EQ(ds.annotations[0].box, (BoundingBox{10, 20, 40, 60}));
  EXPECT_FALSE(ds.annotations[0].confidence.has_value());
}

TEST(Coco, MissingImageReferenceIsAnError) {
  const char* doc = R"({
    "images": [{"id": 1, "file_name": "a.jpg", "width": 10, "height": 10}],
    "annotations": [{"id": 5, "image_id": 99, "category_id": 1, "bbox": [0,0,1,1]}],
    "categories": [{"id": 1, "name": "fire"}]
  })";
  try {
    parse_coco(doc);
    FAIL() << "expected referential-integrity error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::processing);
    EXPECT_NE(std::string(e.what()).find("annotation 5"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(Coco, MalformedJsonReportsPosition) {
  try {
    parse_coco("{\"images\": [,]}");
    FAIL() << "expected parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::processing);
  }
}

TEST(Coco, UnknownKeysAreDroppedWithWarning) {
  const char* doc = R"({
    "images": [{"id": 1, "file_name": "a.jpg", "width": 10, "height": 10, "exotic": 1}],
    "annotations": [],
    "categories": [],
    "custom_block": {}
  })";
  std::vector<std::string> warnings;
  parse_coco(doc, &warnings);
  ASSERT_EQ(warnings.size(), 2u);
  EXPECT_NE(warnings[0].find("custom_block"), std::string::npos);
  EXPECT_NE(warnings[1].find("exotic"), std::string::npos);
}

TEST(Coco, SerializeEmptyDataset) {
  const std::string text = serialize_coco(AnnotatedDataset{});
  const auto doc = nlohmann::json::parse(text);
  EXPECT_TRUE(doc.at("images").empty());
  EXPECT_TRUE(doc.at("annotations").empty());
  EXPECT_TRUE(doc.at("categories").empty());
}

TEST(Coco, CornerToXywhInverse) {
  AnnotatedDataset ds;
  ds.images.push_back({1, "a.jpg", 200, 200, std::nullopt});
  ds.classes.push_back({1, "fire"});
  ds.annotations.push_back({1, {10, 20, 40, 60}, 1, std::nullopt, std::nullopt});
  const auto doc = nlohmann::json::parse(serialize_coco(ds));
  const auto& bbox = doc.at("annotations").at(0).at("bbox");
  EXPECT_EQ(bbox[0].get<double>(), 10.0);
  EXPECT_EQ(bbox[1].get<double>(), 20.0);
  EXPECT_EQ(bbox[2].get<double>(), 30.0);
  EXPECT_EQ(bbox[3].get<double>(), 40.0);
}

TEST(Coco, RoundTripIdentityOnGeneratedDatasets) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const AnnotatedDataset ds =
        testutil::random_dataset(seed, 6, 5, 3, /*with_scores=*/seed % 2 == 0);
    const AnnotatedDataset back = parse_coco(serialize_coco(ds));
    EXPECT_EQ(ds, back) << "seed " << seed;
  }
}

TEST(Coco, ResultsRoundTripAndScoreValidation) {
  EXPECT_TRUE(parse_coco_results("[]").empty());
  const char* one = R"([{"image_id": 3, "category_id": 2, "bbox": [1,2,3,4], "score": 0.75}])";
  const auto results = parse_coco_results(one);
  ASSERT_EQ(results.size(), 1u);
  EXPECT_EQ(results[0].image_id, 3);
  EXPECT_EQ(results[0].box, (BoundingBox{1, 2, 4, 6}));
  EXPECT_DOUBLE_EQ(results[0].confidence.value(), 0.75);

  const char* bad = R"([{"image_id": 3, "category_id": 2, "bbox": [1,2,3,4], "score": 1.5}])";
  EXPECT_THROW(parse_coco_results(bad), Error);
}

TEST(Yolo, LineFormat) {
  const ImageRecord image{1, "a.jpg", 200, 200, std::nullopt};
  const Annotation a{1, {0, 0, 100, 100}, 0, std::nullopt, std::nullopt};
  EXPECT_EQ(yolo_line(a, image), "0 0.250000 0.250000 0.500000 0.500000");

  const ImageRecord odd{2, "b.jpg", 640, 480, std::nullopt};
  const Annotation full{2, {0, 0, 640, 480}, 3, std::nullopt, std::nullopt};
  EXPECT_EQ(yolo_line(full, odd), "3 0.500000 0.500000 1.000000 1.000000");
}

TEST(Yolo, FiveFieldsInRange) {
  const AnnotatedDataset ds = testutil::random_dataset(3, 8, 6);
  for (const auto& [name, content] : yolo_label_files(ds)) {
    std::istringstream lines(content);
    std::string line;
    while (std::getline(lines, line)) {
      std::istringstream fields(line);
      std::string field;
      std::vector<std::string> parts;
      while (fields >> field) parts.push_back(field);
      ASSERT_EQ(parts.size(), 5u) << line;
      for (std::size_t i = 1; i < parts.size(); ++i) {
        const double v = std::stod(parts[i]);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Yolo, OneFilePerImageIncludingEmpty) {
  AnnotatedDataset ds;
  ds.classes.push_back({1, "fire"});
  ds.images.push_back({1, "a.jpg", 10, 10, std::nullopt});
  ds.images.push_back({2, "b.jpg", 10, 10, std::nullopt});
  ds.annotations.push_back({1, {0, 0, 5, 5}, 1, std::nullopt, std::nullopt});
  const auto files = yolo_label_files(ds);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_FALSE(files.at("a.txt").empty());
  EXPECT_TRUE(files.at("b.txt").empty());
}

TEST(Yolo, CocoToYoloToCocoWithinQuantizationBound) {
  const AnnotatedDataset ds = testutil::random_dataset(17, 10, 5);
  std::map<std::int64_t, const ImageRecord*> by_id;
  for (const auto& im : ds.images) by_id[im.id] = &im;

  // Round-trip per image through the YOLO text representation.
  std::map<std::int64_t, std::vector<Annotation>> recovered;
  for (const auto& im : ds.images) {
    AnnotatedDataset sub;
    sub.images = {im};
    sub.classes = ds.classes;
    for (const auto& a : ds.annotations) {
      if (a.image_id == im.id) sub.annotations.push_back(a);
    }
    const auto files = yolo_label_files(sub);
    ASSERT_EQ(files.size(), 1u);
    recovered[im.id] = parse_yolo_labels(files.begin()->second, im);
  }

  std::map<std::int64_t, std::size_t> cursor;
  for (const auto& a : ds.annotations) {
    const ImageRecord& im = *by_id[a.image_id];
    const auto& annotations = recovered[a.image_id];
    ASSERT_LT(cursor[a.image_id], annotations.size());
    const Annotation& b = annotations[cursor[a.image_id]++];
    const double tol_x = 1e-4 * im.width;
    const double tol_y = 1e-4 * im.height;
    EXPECT_NEAR(a.box.x_min, b.box.x_min, tol_x);
    EXPECT_NEAR(a.box.x_max, b.box.x_max, tol_x);
    EXPECT_NEAR(a.box.y_min, b.box.y_min, tol_y);
    EXPECT_NEAR(a.box.y_max, b.box.y_max, tol_y);
    EXPECT_EQ(a.class_id, b.class_id);
  }
}

TEST(Split, PaperRatio) {
  AnnotatedDataset ds = testutil::random_dataset(1, 2593, 0);
  const auto [train, eval] = split_dataset(ds, 0.9, 123);
  EXPECT_EQ(train.images.size(), 2334u);
  EXPECT_EQ(eval.images.size(), 259u);
}

TEST(Split, SmallAndDeterministic) {
  AnnotatedDataset ds = testutil::random_dataset(2, 10, 3);
  const auto [train1, eval1] = split_dataset(ds, 0.9, 77);
  EXPECT_EQ(train1.images.size(), 9u);
  EXPECT_EQ(eval1.images.size(), 1u);
  const auto [train2, eval2] = split_dataset(ds, 0.9, 77);
  EXPECT_EQ(train1, train2);
  EXPECT_EQ(eval1, eval2);
  const auto [train3, eval3] = split_dataset(ds, 0.9, 78);
  EXPECT_TRUE(!(train3 == train1) || !(eval3 == eval1));
}

TEST(Split, PartitionInvariants) {
  const AnnotatedDataset ds = testutil::random_dataset(5, 41, 4);
  const auto [train, eval] = split_dataset(ds, 0.7, 9);
  std::set<std::int64_t> train_ids, eval_ids;
  for (const auto& im : train.images) train_ids.insert(im.id);
  for (const auto& im : eval.images) eval_ids.insert(im.id);
  for (std::int64_t id : train_ids) EXPECT_FALSE(eval_ids.count(id));
  EXPECT_EQ(train_ids.size() + eval_ids.size(), ds.images.size());
  EXPECT_EQ(train.annotations.size() + eval.annotations.size(),
            ds.annotations.size());
  for (const auto& a : train.annotations) EXPECT_TRUE(train_ids.count(a.image_id));
  for (const auto& a : eval.annotations) EXPECT_TRUE(eval_ids.count(a.image_id));
}

TEST(Split, ErrorPaths) {
  AnnotatedDataset one;
  one.images.push_back({1, "a.jpg", 4, 4, std::nullopt});
  EXPECT_THROW(split_dataset(one, 0.9, 1), Error);
  AnnotatedDataset two = testutil::random_dataset(3, 4, 0);
  EXPECT_THROW(split_dataset(two, 1.0, 1), Error);
  EXPECT_THROW(split_dataset(two, 0.0, 1), Error);
}

TEST(Dataset, ValidateCatchesBrokenReferences) {
  AnnotatedDataset ds = testutil::random_dataset(4, 3, 2);
  validate_dataset(ds);
  AnnotatedDataset broken = ds;
  broken.annotations.push_back({999, {0, 0, 1, 1}, 1, std::nullopt, std::nullopt});
  EXPECT_THROW(validate_dataset(broken), Error);
  AnnotatedDataset dup = ds;
  dup.images.push_back(dup.images.front());
  EXPECT_THROW(validate_dataset(dup), Error);
}
