import os

from dotenv import load_dotenv

from settings import get_cache_dir

load_dotenv()


def get_database_url() -> str:
    url = os.environ.get("MSTHERMO_DATABASE_URL", "").strip()
    if not url:
        return f"sqlite:///{get_cache_dir()}/msthermo.db"
    if url.startswith("postgres://"):
        url = "postgresql://" + url[len("postgres://") :]
    return url
