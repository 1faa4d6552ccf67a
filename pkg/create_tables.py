import sys

from bffg.db.repository import create_tables

if __name__ == "__main__":
    # URL argument overrides BFFG_DB_URL
    url = sys.argv[1] if len(sys.argv) > 1 else None
    create_tables(url)
    print(f"Trace tables created in {url or 'BFFG_DB_URL'}")
