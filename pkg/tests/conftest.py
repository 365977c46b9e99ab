import pytest
import shutil


OUTPUT_FOLDER = "turba_test_output"


@pytest.fixture(scope="class")
def rm_output():
    """Remove the output directory before and after running the TestCase."""
    shutil.rmtree(OUTPUT_FOLDER, ignore_errors=True)
    yield
    shutil.rmtree(OUTPUT_FOLDER, ignore_errors=True)
