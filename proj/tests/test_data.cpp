#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ldpo/data.hpp"
#include "test_util.hpp"

using namespace ldpo;
namespace fs = std::filesystem;

TEST(Data, ValidateRejectsDuplicatesAndNonFinite) {
  FeatureMatrix m{{"a", "b"}, Matrix::Zero(2, 3)};
  EXPECT_NO_THROW(m.validate());
  m.ids[1] = "a";
  EXPECT_THROW(m.validate(), Error);
  m.ids[1] = "b";
  m.values(1, 2) = std::numeric_limits<double>::quiet_NaN();
  try {
    m.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("row 1, column 2"), std::string::npos);
  }
}

TEST(Data, SelectKeepsOrder) {
  FeatureMatrix m{{"a", "b", "c"}, Matrix(3, 1)};
  m.values << 1, 2, 3;
  auto s = m.select({2, 0});
  EXPECT_EQ(s.ids, (std::vector<std::string>{"c", "a"}));
  EXPECT_EQ(s.values(0, 0), 3);
  EXPECT_EQ(s.values(1, 0), 1);
}

TEST(Data, GridsFromRows) {
  FeatureMatrix flat{{"x"}, Matrix(1, 8)};
  flat.values << 0, 1, 2, 3, 4, 5, 6, 7;
  auto grids = grids_from_rows(flat, 2);
  ASSERT_EQ(grids.size(), 1u);
  EXPECT_EQ(grids[0].side, 2u);
  EXPECT_EQ(grids[0].descriptors.rows(), 4);
  EXPECT_EQ(grids[0].descriptors(3, 1), 7);
  EXPECT_THROW(grids_from_rows(flat, 3), Error);
  EXPECT_THROW(grids_from_rows(flat, 4), Error);  // 2 locations is not a square
  EXPECT_EQ(pool_descriptors(grids).rows(), 4);
}

TEST(Data, SplitCountsFollowRatios) {
  auto s = split_dataset(100, {}, 5);
  EXPECT_EQ(s.count(Split::Train), 70u);
  EXPECT_EQ(s.count(Split::Validation), 10u);
  EXPECT_EQ(s.count(Split::Test), 20u);
  EXPECT_EQ(s.seed, 5u);

  auto odd = split_dataset(7, {}, 1);
  EXPECT_EQ(odd.count(Split::Validation), 0u);
  EXPECT_EQ(odd.count(Split::Test), 1u);
  EXPECT_EQ(odd.count(Split::Train), 6u);
}

TEST(Data, SplitIsSeededPartition) {
  auto a = split_dataset(50, {}, 9);
  auto b = split_dataset(50, {}, 9);
  auto c = split_dataset(50, {}, 10);
  EXPECT_EQ(a.tags, b.tags);
  EXPECT_NE(a.tags, c.tags);
  std::size_t total = a.count(Split::Train) + a.count(Split::Validation) + a.count(Split::Test);
  EXPECT_EQ(total, 50u);
}

TEST(Data, SplitRejectsBadRatios) {
  EXPECT_THROW(split_dataset(10, {0.5, 0.1, 0.1}, 0), Error);
  EXPECT_THROW(split_dataset(10, {1.2, -0.1, -0.1}, 0), Error);
}

TEST(Data, Tokenize) {
  EXPECT_EQ(tokenize("The LEFT lung, no mass; a 3cm node."),
            (std::vector<std::string>{"the", "left", "lung", "mass", "node"}));
  EXPECT_EQ(tokenize("a bc", 1), (std::vector<std::string>{"a", "bc"}));
}

TEST(Data, CsvRoundTripIsExact) {
  TempDir dir("csv");
  FeatureMatrix m{{"p", "q"}, Matrix(2, 2)};
  m.values << 0.1, -1e-300, 1.0 / 3.0, 12345.678;
  save_feature_matrix(m, dir / "m.csv", MatrixFormat::Csv);
  auto back = load_feature_matrix(dir / "m.csv", MatrixFormat::Csv);
  EXPECT_EQ(back.ids, m.ids);
  EXPECT_EQ(back.values, m.values);
}

TEST(Data, FmatRoundTripIsExact) {
  TempDir dir("fmat");
  FeatureMatrix m{{"p", "q", "r"}, Matrix::Random(3, 4)};
  save_feature_matrix(m, dir / "m.fmat", MatrixFormat::Fmat);
  auto back = load_feature_matrix(dir / "m.fmat", format_from_extension(dir / "m.fmat"));
  EXPECT_EQ(back.ids, m.ids);
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(decode_fmat(encode_fmat(m.values), "mem"), m.values);
}

TEST(Data, FmatRejectsTruncation) {
  auto bytes = encode_fmat(Matrix::Ones(2, 2));
  EXPECT_THROW(decode_fmat(bytes.substr(0, bytes.size() - 1), "mem"), Error);
  EXPECT_THROW(decode_fmat("XXXX", "mem"), Error);
}

TEST(Data, CsvErrorNamesRowAndColumn) {
  TempDir dir("bad");
  std::ofstream(dir / "bad.csv") << "id,f0,f1\na,1,2\nb,3,oops\n";
  try {
    load_feature_matrix(dir / "bad.csv", MatrixFormat::Csv);
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 1"), std::string::npos) << msg;
  }
}

TEST(Data, AssignmentAndSplitRoundTrip) {
  TempDir dir("assign");
  std::vector<std::string> ids{"a", "b", "c"};
  ClusterAssignment a{{2, 0, 1}, 3};
  save_assignment(ids, a, dir / "a.csv");
  auto back = load_assignment(dir / "a.csv");
  EXPECT_EQ(back.ids, ids);
  EXPECT_EQ(back.assignment.labels, a.labels);

  auto s = split_dataset(3, {0.4, 0.3, 0.3}, 1);
  save_split(ids, s, dir / "s.csv");
  std::vector<std::string> reordered{"c", "a", "b"};
  auto loaded = load_split(dir / "s.csv", reordered);
  EXPECT_EQ(loaded.tags[0], s.tags[2]);
  EXPECT_EQ(loaded.tags[1], s.tags[0]);
}

TEST(Data, AlignTo) {
  LabeledAssignment a{{"x", "y", "z"}, {{0, 0, 1}, 2}};
  LabeledAssignment b{{"z", "x", "y"}, {{5, 3, 4}, 6}};
  EXPECT_EQ(align_to(a, b).labels, (std::vector<std::size_t>{3, 4, 5}));
  LabeledAssignment c{{"z", "x", "w"}, {{0, 0, 0}, 1}};
  EXPECT_THROW(align_to(a, c), Error);
}

TEST(Data, TextCorpusLoads) {
  TempDir dir("text");
  std::ofstream(dir / "t.json") << R"({"a": "Mass in the LEFT lung", "b": "no"})";
  auto corpus = load_text_corpus(dir / "t.json");
  EXPECT_EQ(corpus.at("a"), (std::vector<std::string>{"mass", "the", "left", "lung"}));
  EXPECT_TRUE(corpus.at("b").empty());
  std::ofstream(dir / "bad.json") << R"(["a"])";
  EXPECT_THROW(load_text_corpus(dir / "bad.json"), Error);
}

TEST(Data, FormatReal) {
  EXPECT_EQ(format_real(1.0), "1.0");
  EXPECT_EQ(format_real(0.5), "0.5");
  EXPECT_EQ(std::stod(format_real(0.1 + 0.2)), 0.1 + 0.2);
}

TEST(Data, AtomicWriteLeavesNoTemporary) {
  TempDir dir("atomic");
  write_file_atomic(dir / "f.txt", "hello");
  EXPECT_EQ(read_file(dir / "f.txt"), "hello");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path())) ++entries;
  EXPECT_EQ(entries, 1u);
}
