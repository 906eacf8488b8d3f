#include "matchlike/tabular.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "matchlike/error.hpp"

namespace matchlike {
namespace {

std::vector<ColumnSchema> small_schema() {
  return {ColumnSchema::numeric("income"),
          ColumnSchema::categorical("area", {"Urban", "Rural", "Semiurban"}),
          ColumnSchema::categorical("status", {"deny", "approve"})};
}

TEST(LoadCsv, ThreeRows) {
  std::istringstream in("income,area,status\n100,Urban,deny\n200,Rural,approve\n300,Semiurban,approve\n");
  Dataset ds = load_dataset_csv(in, small_schema(), "status");
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.label(1), 1u);
}

TEST(LoadCsv, HeaderInAnyOrder) {
  std::istringstream in("status,income,area\ndeny,100,Urban\n");
  Dataset ds = load_dataset_csv(in, small_schema(), "status");
  EXPECT_EQ(std::get<double>(ds.rows()[0][0]), 100.0);
}

TEST(LoadCsv, UnknownLevelRejectedWithRowIndex) {
  std::istringstream in("income,area,status\n100,Urban,deny\n200,Urbann,approve\n");
  try {
    load_dataset_csv(in, small_schema(), "status");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemaMismatch);
    EXPECT_EQ(e.detail(), "area");
    EXPECT_EQ(e.position(), 1u);
  }
}

TEST(LoadCsv, MissingValueAndMissingHeader) {
  std::istringstream missing("income,area,status\n,Urban,deny\n");
  EXPECT_THROW(load_dataset_csv(missing, small_schema(), "status"), Error);
  std::istringstream empty("");
  try {
    load_dataset_csv(empty, small_schema(), "status");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingHeader);
  }
}

TEST(LoadCsv, LoanFixture) {
  Dataset ds = testing::loan_dataset();
  EXPECT_EQ(ds.size(), 600u);
  EXPECT_EQ(ds.schema().size(), 12u);
  EXPECT_EQ(ds.classes(), (std::vector<std::string>{"deny", "approve"}));
}

TEST(Encode, OneHotStandardizeAndDrop) {
  std::vector<ColumnSchema> schema = {ColumnSchema::numeric("x"),
                                      ColumnSchema::categorical("area", {"Urban", "Rural", "Semiurban"}),
                                      ColumnSchema::numeric("constant"),
                                      ColumnSchema::categorical("y", {"a", "b"})};
  Dataset ds(schema, "y",
             {{2.0, std::string("Urban"), 5.0, std::string("a")},
              {4.0, std::string("Semiurban"), 5.0, std::string("b")}});
  EncodedMatrix m = encode(ds);
  EXPECT_EQ(m.feature_names,
            (std::vector<std::string>{"x", "area=Urban", "area=Rural", "area=Semiurban"}));
  EXPECT_EQ(m.matrix[0], (std::vector<double>{-1, 1, 0, 0}));
  EXPECT_EQ(m.matrix[1], (std::vector<double>{1, 0, 0, 1}));
  ASSERT_EQ(m.warnings.size(), 1u);
  EXPECT_NE(m.warnings[0].find("constant"), std::string::npos);
}

TEST(Encode, EmptyDataset) {
  Dataset ds(small_schema(), "status");
  try {
    encode(ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

TEST(Encode, OneHotGroupsSumToOneAndRoundTrip) {
  Dataset ds = testing::loan_dataset();
  Encoder enc = Encoder::fit(ds);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto row = ds.features(r);
    const auto x = enc.encode(row);
    for (std::size_t f = 0; f < enc.features().size(); ++f) {
      const auto& g = enc.groups()[f];
      if (enc.features()[f].is_numeric()) continue;
      double sum = 0;
      for (std::size_t k = 0; k < g.width; ++k) sum += x[g.offset + k];
      EXPECT_EQ(sum, 1.0);
    }
    const auto back = enc.decode(x);
    for (std::size_t f = 0; f < row.size(); ++f) {
      if (enc.features()[f].is_numeric()) {
        EXPECT_NEAR(std::get<double>(back[f]), std::get<double>(row[f]), 1e-9);
      } else {
        EXPECT_EQ(back[f], row[f]);
      }
    }
  }
}

TEST(EditDataset, AddUpdateDelete) {
  Dataset ds = testing::threshold_dataset();
  const auto n = ds.size();
  ds.add_row({6000.0, std::string("approve")});
  EXPECT_EQ(ds.size(), n + 1);
  try {
    ds.update_cell(n + 5, "income", 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndexOutOfRange);
  }
  try {
    ds.update_cell(0, "loan_status", std::string("maybe"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemaMismatch);
  }
  ds.delete_row(0);
  EXPECT_EQ(ds.size(), n);
  EXPECT_THROW(ds.add_row({std::string("x"), std::string("approve")}), Error);
}

}  // namespace
}  // namespace matchlike
